#include "sprout/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sprout/stain.hpp"

namespace sprout::prompting {

std::unique_ptr<Refiner> make_refiner(double sigma) {
    if (sigma > 0.0) return std::make_unique<GaussianRefiner>(sigma);
    return std::make_unique<IdentityRefiner>();
}

ActivationStack reweight_and_project(const Eigen::MatrixXd& features, Shape grid, const ot::TransportPlan& plan,
                                     const std::vector<features::Side>& class_of, Shape target,
                                     const Refiner& refiner, const ProjectionOptions& options) {
    if (!plan.converged && !options.allow_unconverged)
        throw RuntimeError("transport plan did not converge (rho = " + std::to_string(plan.rho) + ")");
    const auto n = static_cast<Eigen::Index>(grid.area());
    if (features.rows() != n || plan.values.rows() != n)
        throw ConfigError("features, plan and grid disagree on the number of cells");
    const auto m = plan.prototypes();
    if (static_cast<Eigen::Index>(class_of.size()) != m) throw ConfigError("class labels do not match plan columns");

    const Eigen::VectorXd norms = features.rowwise().norm();
    const Shape resized = options.cell > 0 ? Shape{grid.rows * options.cell, grid.cols * options.cell} : target;
    if (resized.rows < target.rows || resized.cols < target.cols)
        throw ConfigError("projected grid does not cover the target image");

    ActivationStack stack{target, {}, class_of};
    stack.maps.reserve(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        ScalarMap cell_map(grid.rows, grid.cols);
        for (Eigen::Index i = 0; i < n; ++i) cell_map.data()[i] = norms(i) * plan.values(i, k);

        ScalarMap full = (resized == grid) ? cell_map : morph::resize(cell_map, resized, options.interpolation);
        if (resized != target) {
            ScalarMap cropped(target.rows, target.cols);
            for (int r = 0; r < target.rows; ++r)
                for (int c = 0; c < target.cols; ++c) cropped(r, c) = full(r, c);
            full = std::move(cropped);
        }
        ScalarMap refined = refiner.apply(full);
        for (auto& v : refined.values()) v = std::max(0.0, v);
        stack.maps.push_back(std::move(refined));
    }
    return stack;
}

namespace {

BinaryMask binarize(const ScalarMap& map, const char* name) {
    const auto [mn, mx] = std::minmax_element(map.values().begin(), map.values().end());
    if (map.empty() || !(*mx > 0.0)) throw RuntimeError(std::string("all-zero ") + name + " activation aggregate");
    BinaryMask out(map.rows(), map.cols());
    if (!(*mx > *mn)) {
        for (auto& b : out.bytes()) b = 1;
        return out;
    }
    const auto split = stain::otsu_split(std::span<const double>(map.data(), map.size()));
    for (std::size_t i = 0; i < map.size(); ++i) out.bytes()[i] = split.upper(map.data()[i]);
    return out;
}

}  // namespace

ClassMaps aggregate_and_binarize(const ActivationStack& stack) {
    const bool has_fg = std::count(stack.class_of.begin(), stack.class_of.end(), features::Side::fg) > 0;
    const bool has_bg = std::count(stack.class_of.begin(), stack.class_of.end(), features::Side::bg) > 0;
    if (!has_fg || !has_bg) throw ConfigError("activation stack needs at least one fg and one bg channel");

    ClassMaps out{{}, {}, ScalarMap(stack.shape.rows, stack.shape.cols), ScalarMap(stack.shape.rows, stack.shape.cols)};
    for (std::size_t k = 0; k < stack.maps.size(); ++k) {
        auto& dst = stack.class_of[k] == features::Side::fg ? out.fg_activation : out.bg_activation;
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += stack.maps[k].data()[i];
    }
    out.fg = binarize(out.fg_activation, "foreground");
    out.bg = binarize(out.bg_activation, "background");

    const double fg_max = *std::max_element(out.fg_activation.values().begin(), out.fg_activation.values().end());
    const double bg_max = *std::max_element(out.bg_activation.values().begin(), out.bg_activation.values().end());
    for (std::size_t i = 0; i < out.fg_activation.size(); ++i) {
        if (!(out.fg.bytes()[i] && out.bg.bytes()[i])) continue;
        const double f = out.fg_activation.data()[i] / fg_max;
        const double b = out.bg_activation.data()[i] / bg_max;
        if (f >= b)
            out.bg.bytes()[i] = 0;
        else
            out.fg.bytes()[i] = 0;
    }
    return out;
}

PositiveResult positive_points(const BinaryMask& fg_map, const BinaryMask& m_fg, const PositiveOptions& options) {
    if (fg_map.shape() != m_fg.shape()) throw ConfigError("foreground masks differ in shape");
    const BinaryMask region = options.union_with_high_confidence ? (fg_map | m_fg) : fg_map;

    const ScalarMap dist = morph::distance_transform(region);
    const auto markers = morph::local_maxima(dist, region, options.min_separation);
    ScalarMap elevation = dist;
    for (auto& v : elevation.values()) v = -v;

    PositiveResult out;
    out.regions = morph::watershed(elevation, markers, region);

    const int basins = static_cast<int>(markers.size());
    std::vector<double> sum_r(basins + 1, 0.0), sum_c(basins + 1, 0.0);
    std::vector<std::size_t> area(basins + 1, 0);
    for (int r = 0; r < region.rows(); ++r)
        for (int c = 0; c < region.cols(); ++c) {
            const int l = out.regions(r, c);
            if (l <= 0) continue;
            sum_r[l] += r;
            sum_c[l] += c;
            ++area[l];
        }

    for (int l = 1; l <= basins; ++l) {
        if (area[l] < options.min_area || area[l] == 0) continue;
        const double cr = sum_r[l] / static_cast<double>(area[l]);
        const double cc = sum_c[l] / static_cast<double>(area[l]);
        Point p{static_cast<int>(std::lround(cr)), static_cast<int>(std::lround(cc))};
        if (!out.regions.contains(p.row, p.col) || out.regions(p.row, p.col) != l) {
            double best = std::numeric_limits<double>::infinity();
            for (int r = 0; r < region.rows(); ++r)
                for (int c = 0; c < region.cols(); ++c) {
                    if (out.regions(r, c) != l) continue;
                    const double d = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                    if (d < best) {
                        best = d;
                        p = {r, c};
                    }
                }
        }
        out.points.push_back(p);
    }
    return out;
}

std::vector<Point> negative_points(const BinaryMask& bg_map, const BinaryMask& fg_map, int stride, int margin) {
    if (stride <= 0) throw ConfigError("negative stride must be > 0");
    if (bg_map.shape() != fg_map.shape()) throw ConfigError("background/foreground masks differ in shape");
    const BinaryMask region = morph::dilate(bg_map, std::max(0, margin)) & ~fg_map;
    std::vector<Point> out;
    for (int r = 0; r < region.rows(); r += stride)
        for (int c = 0; c < region.cols(); c += stride)
            if (region(r, c)) out.push_back({r, c});
    return out;
}

ProbeOutcome merge_stop_probe(const BinaryMask& fg_map, int prev_components, const StopProbeConfig& config) {
    const auto cc = morph::connected_components(fg_map);
    ProbeOutcome out;
    out.components = cc.count;
    const std::size_t largest = cc.areas.empty() ? 0 : *std::max_element(cc.areas.begin(), cc.areas.end());
    out.largest_fraction = fg_map.shape().area() ? static_cast<double>(largest) / fg_map.shape().area() : 0.0;
    if (prev_components > 0)
        out.fired = (prev_components - cc.count >= config.merge_k) && out.largest_fraction > config.area_cap;
    return out;
}

void PromptSet::validate(Shape image) const {
    auto inside = [&](const Point& p) { return p.row >= 0 && p.col >= 0 && p.row < image.rows && p.col < image.cols; };
    for (const auto& p : positives)
        if (!inside(p)) throw ConfigError("positive prompt outside the image");
    for (const auto& p : negatives)
        if (!inside(p)) throw ConfigError("negative prompt outside the image");
    const std::set<Point> pos(positives.begin(), positives.end());
    for (const auto& p : negatives)
        if (pos.count(p)) throw ConfigError("a point is both a positive and a negative prompt");
}

namespace {

nlohmann::json points_json(const std::vector<Point>& pts) {
    auto arr = nlohmann::json::array();
    for (const auto& p : pts) arr.push_back({p.row, p.col});
    return arr;
}

std::vector<Point> points_from(const nlohmann::json& arr) {
    std::vector<Point> out;
    for (const auto& p : arr) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("prompt coordinates must be [row, col] pairs");
        out.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    return out;
}

}  // namespace

nlohmann::json to_json(const PromptSet& prompts) {
    nlohmann::json doc;
    doc["image_id"] = prompts.image_id;
    doc["positives"] = points_json(prompts.positives);
    doc["negatives"] = points_json(prompts.negatives);
    if (!prompts.groups.empty()) {
        auto groups = nlohmann::json::array();
        for (const auto& g : prompts.groups)
            groups.push_back({{"patch", g.patch},
                              {"index", g.index},
                              {"positive", {g.positive.row, g.positive.col}},
                              {"negatives", points_json(g.negatives)}});
        doc["groups"] = std::move(groups);
    }
    return doc;
}

PromptSet prompts_from_json(const nlohmann::json& doc) {
    PromptSet p;
    p.image_id = doc.at("image_id").get<std::string>();
    p.positives = points_from(doc.at("positives"));
    p.negatives = points_from(doc.at("negatives"));
    if (doc.contains("groups")) {
        for (const auto& g : doc.at("groups")) {
            PromptGroup group;
            group.patch = g.at("patch").get<int>();
            group.index = g.at("index").get<int>();
            const auto pos = points_from(nlohmann::json::array({g.at("positive")}));
            group.positive = pos.front();
            group.negatives = points_from(g.at("negatives"));
            p.groups.push_back(std::move(group));
        }
    }
    return p;
}

}  // namespace sprout::prompting
