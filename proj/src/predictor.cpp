#include "sprout/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sprout/tensor_io.hpp"
#include "sprout/trace.hpp"

namespace sprout::predictor {

int PatchLayout::stride() const {
    return static_cast<int>(std::floor(patch_size * (1.0 - overlap) + 1e-9));
}

void PatchLayout::validate() const {
    if (patch_size < 16) throw ConfigError("prediction patch size must be >= 16");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("prediction overlap must lie in [0, 1)");
    if (stride() < 1) throw ConfigError("prediction stride must be >= 1");
}

namespace {

std::vector<int> origins(int extent, int patch, int stride) {
    if (patch >= extent) return {0};
    std::vector<int> out;
    for (int o = 0; o + patch <= extent; o += stride) out.push_back(o);
    if (out.back() + patch < extent) out.push_back(extent - patch);
    return out;
}

long long sq_dist(const Point& a, const Point& b) {
    const long long dr = a.row - b.row, dc = a.col - b.col;
    return dr * dr + dc * dc;
}

bool inside(const Box& b, const Point& p) { return p.row >= b.r0 && p.row < b.r1 && p.col >= b.c0 && p.col < b.c1; }

}  // namespace

std::vector<Box> patch_boxes(Shape image, const PatchLayout& layout) {
    layout.validate();
    std::vector<Box> boxes;
    const int ph = std::min(layout.patch_size, image.rows);
    const int pw = std::min(layout.patch_size, image.cols);
    for (int r0 : origins(image.rows, layout.patch_size, layout.stride()))
        for (int c0 : origins(image.cols, layout.patch_size, layout.stride())) boxes.push_back({r0, c0, r0 + ph, c0 + pw});
    return boxes;
}

std::vector<prompting::PromptGroup> assign_prompts_to_patches(const prompting::PromptSet& prompts,
                                                              const PatchLayout& layout, Shape image,
                                                              int negatives_per_positive) {
    const auto boxes = patch_boxes(image, layout);
    std::vector<int> next_index(boxes.size(), 0);
    std::vector<prompting::PromptGroup> groups;
    for (const auto& pos : prompts.positives) {
        // Centers in doubled coordinates keep the comparison exact.
        int best = -1;
        long long best_d = std::numeric_limits<long long>::max();
        for (std::size_t k = 0; k < boxes.size(); ++k) {
            if (!inside(boxes[k], pos)) continue;
            const long long dr = 2LL * pos.row - (boxes[k].r0 + boxes[k].r1 - 1);
            const long long dc = 2LL * pos.col - (boxes[k].c0 + boxes[k].c1 - 1);
            const long long d = dr * dr + dc * dc;
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        if (best < 0) throw RuntimeError("positive prompt is not covered by any patch");

        std::vector<Point> candidates;
        for (const auto& n : prompts.negatives)
            if (inside(boxes[best], n)) candidates.push_back(n);
        std::stable_sort(candidates.begin(), candidates.end(), [&](const Point& a, const Point& b) {
            const auto da = sq_dist(a, pos), db = sq_dist(b, pos);
            return da != db ? da < db : a < b;
        });
        if (static_cast<int>(candidates.size()) > negatives_per_positive) candidates.resize(negatives_per_positive);
        groups.push_back({best, next_index[best]++, pos, std::move(candidates)});
    }
    return groups;
}

std::shared_ptr<const OraclePredictor::Hematoxylin> OraclePredictor::hematoxylin(const PatchRequest& req) const {
    const std::string key = req.image_id + "/" + std::to_string(req.patch) + "/" +
                            std::to_string(reinterpret_cast<std::uintptr_t>(req.pixels->data()));
    std::lock_guard lock(cache_mutex_);
    if (!cache_ || key != cache_key_) {
        auto h = std::make_shared<Hematoxylin>();
        h->s_h = stain::decompose(*req.pixels, stains_).s_h;
        h->peak = h->s_h.empty() ? 0.0 : *std::max_element(h->s_h.values().begin(), h->s_h.values().end());
        cache_ = std::move(h);
        cache_key_ = key;
    }
    return cache_;
}

std::optional<Prediction> OraclePredictor::predict(const PatchRequest& req, std::string& reason) const {
    const auto cached = hematoxylin(req);
    const ScalarMap& sh = cached->s_h;
    const int rows = sh.rows(), cols = sh.cols();
    if (!sh.contains(req.positive.row, req.positive.col)) {
        reason = "positive outside patch";
        return std::nullopt;
    }

    double seed = 0.0;
    int seed_n = 0;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
            if (sh.contains(req.positive.row + dr, req.positive.col + dc)) {
                seed += sh(req.positive.row + dr, req.positive.col + dc);
                ++seed_n;
            }
    seed /= seed_n;
    if (seed < config_.seed_min) {
        reason = "empty growth: seed s_h " + std::to_string(seed) + " below " + std::to_string(config_.seed_min);
        return std::nullopt;
    }

    BinaryMask blocked(rows, cols);
    for (const auto& n : req.negatives)
        if (blocked.contains(n.row, n.col)) blocked.set(n.row, n.col);
    if (blocked(req.positive.row, req.positive.col)) {
        reason = "positive coincides with a negative";
        return std::nullopt;
    }

    const double floor = config_.drop * seed;
    const double step = config_.step_tol * seed;
    BinaryMask mask(rows, cols);
    std::vector<Point> stack{req.positive};
    mask.set(req.positive.row, req.positive.col);
    std::size_t area = 1;
    int r_lo = req.positive.row, r_hi = req.positive.row, c_lo = req.positive.col, c_hi = req.positive.col;
    const auto cap = static_cast<std::size_t>(config_.max_area_fraction * rows * cols);
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        for (int k = 0; k < 4; ++k) {
            const int r = p.row + dr[k], c = p.col + dc[k];
            if (!mask.contains(r, c) || mask(r, c) || blocked(r, c)) continue;
            if (sh(r, c) < floor || std::abs(sh(r, c) - sh(p.row, p.col)) > step) continue;
            mask.set(r, c);
            stack.push_back({r, c});
            r_lo = std::min(r_lo, r);
            r_hi = std::max(r_hi, r);
            c_lo = std::min(c_lo, c);
            c_hi = std::max(c_hi, c);
            if (++area > cap) {
                reason = "growth exceeded the area cap";
                return std::nullopt;
            }
        }
    }

    // Fill enclosed holes (pixels cut off from the region's bounding-box
    // ring by the region), keeping negatives out.
    const int wr0 = std::max(0, r_lo - 1), wr1 = std::min(rows - 1, r_hi + 1);
    const int wc0 = std::max(0, c_lo - 1), wc1 = std::min(cols - 1, c_hi + 1);
    BinaryMask outside(wr1 - wr0 + 1, wc1 - wc0 + 1);
    std::vector<Point> flood;
    auto seed_outside = [&](int r, int c) {
        if (!mask(r, c) && !outside(r - wr0, c - wc0)) {
            outside.set(r - wr0, c - wc0);
            flood.push_back({r, c});
        }
    };
    for (int r = wr0; r <= wr1; ++r) {
        seed_outside(r, wc0);
        seed_outside(r, wc1);
    }
    for (int c = wc0; c <= wc1; ++c) {
        seed_outside(wr0, c);
        seed_outside(wr1, c);
    }
    while (!flood.empty()) {
        const Point p = flood.back();
        flood.pop_back();
        for (int k = 0; k < 4; ++k) {
            const int r = p.row + dr[k], c = p.col + dc[k];
            if (r >= wr0 && r <= wr1 && c >= wc0 && c <= wc1) seed_outside(r, c);
        }
    }
    double total = 0.0;
    std::size_t n = 0;
    for (int r = wr0; r <= wr1; ++r)
        for (int c = wc0; c <= wc1; ++c) {
            if (!outside(r - wr0, c - wc0) && !blocked(r, c)) mask.set(r, c);
            if (mask(r, c)) {
                total += sh(r, c);
                ++n;
            }
        }
    const double score = cached->peak > 0.0 ? std::clamp(total / static_cast<double>(n) / cached->peak, 0.0, 1.0) : 0.0;
    return Prediction{std::move(mask), score};
}

std::filesystem::path FileBackedPredictor::mask_path(const std::filesystem::path& root, const std::string& image_id,
                                                     int patch, int index) {
    return root / image_id / ("mask_" + std::to_string(patch) + "_" + std::to_string(index) + ".bin");
}

std::optional<Prediction> FileBackedPredictor::predict(const PatchRequest& req, std::string& reason) const {
    const auto path = mask_path(root_, req.image_id, req.patch, req.index);
    auto sidecar = path;
    sidecar.replace_extension(".json");
    if (!std::filesystem::exists(path)) {
        reason = "missing mask file " + path.string();
        return std::nullopt;
    }
    const auto t = io::read_tensor(path);
    const int rows = req.pixels->rows(), cols = req.pixels->cols();
    if (static_cast<int>(t.h) != rows || static_cast<int>(t.w) != cols || t.d != 1) {
        reason = "mask tensor shape does not match the patch";
        return std::nullopt;
    }
    Prediction pred{BinaryMask(rows, cols), 0.0};
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const float v = t.at(r, c, 0);
            if (v != 0.0f && v != 1.0f) {
                reason = "mask values must be exactly 0 or 1";
                return std::nullopt;
            }
            pred.mask.set(r, c, v == 1.0f);
        }
    trace::record(trace::Access::read, sidecar);
    std::ifstream in(sidecar);
    if (!in) {
        reason = "missing score sidecar " + sidecar.string();
        return std::nullopt;
    }
    pred.score = nlohmann::json::parse(in).at("score").get<double>();
    return pred;
}

PredictionRun predict_groups(const RasterImage& image, const std::string& image_id,
                             const std::vector<prompting::PromptGroup>& groups, const std::vector<Box>& patches,
                             const MaskPredictor& predictor) {
    PredictionRun run;
    run.instances.shape = image.shape();
    int cached_patch = -1;
    RasterImage pixels;
    for (const auto& g : groups) {
        std::string reason;
        try {
            const Box& box = patches.at(g.patch);
            if (g.patch != cached_patch) {
                pixels = RasterImage(box.r1 - box.r0, box.c1 - box.c0, image.channels());
                for (int r = box.r0; r < box.r1; ++r)
                    for (int c = box.c0; c < box.c1; ++c)
                        for (int ch = 0; ch < image.channels(); ++ch) pixels(r - box.r0, c - box.c0, ch) = image(r, c, ch);
                cached_patch = g.patch;
            }
            PatchRequest req{image_id, g.patch, g.index, &pixels, {g.positive.row - box.r0, g.positive.col - box.c0}, {}};
            for (const auto& n : g.negatives) req.negatives.push_back({n.row - box.r0, n.col - box.c0});

            auto pred = predictor.predict(req, reason);
            if (!pred) {
                run.skipped.push_back({g.patch, g.index, reason});
                continue;
            }
            std::vector<Point> px;
            for (int r = 0; r < pred->mask.rows(); ++r)
                for (int c = 0; c < pred->mask.cols(); ++c)
                    if (pred->mask(r, c)) px.push_back({r + box.r0, c + box.c0});
            if (px.empty()) {
                run.skipped.push_back({g.patch, g.index, "predictor returned an empty mask"});
                continue;
            }
            run.instances.add(InstanceMask::from_pixels(image.shape(), px), std::clamp(pred->score, 0.0, 1.0), g.patch);
        } catch (const std::exception& e) {
            run.skipped.push_back({g.patch, g.index, std::string("predictor failure: ") + e.what()});
        }
    }
    return run;
}

namespace {

struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

bool merge_pass(const InstanceSet& in, double iou_merge, InstanceSet& out) {
    const std::size_t n = in.size();
    DisjointSet ds(n);
    bool merged = false;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (intersect(in.masks[i].box(), in.masks[j].box()).empty()) continue;
            if (mask_iou(in.masks[i], in.masks[j]) >= iou_merge) {
                ds.unite(i, j);
                merged = true;
            }
        }
    out = InstanceSet{in.shape, {}, {}, {}};
    std::vector<long> slot(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = ds.find(i);
        if (slot[root] < 0) {
            slot[root] = static_cast<long>(out.size());
            out.add(in.masks[i], in.scores[i], in.provenance[i]);
            continue;
        }
        const auto k = static_cast<std::size_t>(slot[root]);
        out.masks[k] = out.masks[k].united(in.masks[i]);
        if (in.scores[i] > out.scores[k]) {
            out.scores[k] = in.scores[i];
            out.provenance[k] = in.provenance[i];
        }
    }
    return merged;
}

}  // namespace

InstanceSet merge_overlapped(const InstanceSet& instances, double iou_merge) {
    if (!(iou_merge > 0.0 && iou_merge <= 1.0)) throw ConfigError("iou_merge must lie in (0, 1]");
    instances.validate();
    InstanceSet current = instances;
    InstanceSet next;
    while (merge_pass(current, iou_merge, next)) current = std::move(next);
    return next;
}

}  // namespace sprout::predictor
