#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "sprout/predictor.hpp"
#include "sprout/tensor_io.hpp"
#include "unit/helpers.hpp"

using namespace sprout;
using namespace sprout::predictor;
namespace fs = std::filesystem;

namespace {

const stain::StainMatrix kStains = stain::StainMatrix::ruifrok_he();

RasterImage paint(const BinaryMask& dark, double h_level = 0.9) {
    RasterImage img(dark.rows(), dark.cols(), 3);
    for (int r = 0; r < dark.rows(); ++r)
        for (int c = 0; c < dark.cols(); ++c)
            for (int k = 0; k < 3; ++k) {
                const double od = dark(r, c) ? h_level * kStains.h()[k] + 0.1 * kStains.e()[k] : 0.3 * kStains.e()[k];
                img(r, c, k) = static_cast<std::uint8_t>(std::lround(255.0 * std::exp(-od)));
            }
    return img;
}

// Fixpoint region growing followed by hole filling from the image border.
struct Reference {
    bool skipped = false;
    BinaryMask mask;
    double score = 0.0;
};

Reference grow_reference(const RasterImage& img, Point seed_pt, const std::vector<Point>& negatives,
                         const OracleConfig& cfg) {
    const ScalarMap sh = stain::decompose(img, kStains).s_h;
    Reference out;
    double seed = 0.0;
    int n = 0;
    for (int r = seed_pt.row - 1; r <= seed_pt.row + 1; ++r)
        for (int c = seed_pt.col - 1; c <= seed_pt.col + 1; ++c)
            if (sh.contains(r, c)) seed += sh(r, c), ++n;
    seed /= n;
    if (seed < cfg.seed_min) {
        out.skipped = true;
        return out;
    }
    std::set<Point> neg(negatives.begin(), negatives.end());
    BinaryMask m(sh.rows(), sh.cols());
    m.set(seed_pt.row, seed_pt.col);
    const Point nb[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    for (bool changed = true; changed;) {
        changed = false;
        for (int r = 0; r < sh.rows(); ++r)
            for (int c = 0; c < sh.cols(); ++c) {
                if (m(r, c) || neg.count({r, c}) || sh(r, c) < cfg.drop * seed) continue;
                for (const auto& d : nb) {
                    const int pr = r + d.row, pc = c + d.col;
                    if (m.contains(pr, pc) && m(pr, pc) && std::abs(sh(r, c) - sh(pr, pc)) <= cfg.step_tol * seed) {
                        m.set(r, c);
                        changed = true;
                        break;
                    }
                }
            }
    }
    BinaryMask reach(sh.rows(), sh.cols());
    for (bool changed = true; changed;) {
        changed = false;
        for (int r = 0; r < sh.rows(); ++r)
            for (int c = 0; c < sh.cols(); ++c) {
                if (m(r, c) || reach(r, c)) continue;
                bool edge = r == 0 || c == 0 || r == sh.rows() - 1 || c == sh.cols() - 1;
                for (const auto& d : nb) edge |= reach.contains(r + d.row, c + d.col) && reach(r + d.row, c + d.col);
                if (edge) {
                    reach.set(r, c);
                    changed = true;
                }
            }
    }
    double total = 0.0;
    std::size_t area = 0;
    for (int r = 0; r < sh.rows(); ++r)
        for (int c = 0; c < sh.cols(); ++c) {
            if (!m(r, c) && !reach(r, c) && !neg.count({r, c})) m.set(r, c);
            if (m(r, c)) total += sh(r, c), ++area;
        }
    const double peak = *std::max_element(sh.values().begin(), sh.values().end());
    out.mask = m;
    out.score = std::clamp(total / area / peak, 0.0, 1.0);
    return out;
}

PatchRequest request(const RasterImage& img, Point pos, std::vector<Point> negs = {}) {
    return {"img", 0, 0, &img, pos, std::move(negs)};
}

InstanceSet set_of(Shape s, std::vector<BinaryMask> masks, std::vector<double> scores) {
    InstanceSet out{s, {}, {}, {}};
    for (std::size_t i = 0; i < masks.size(); ++i) out.add(testing::inst(masks[i]), scores[i], static_cast<int>(i));
    return out;
}

void write_mask(const fs::path& root, const std::string& id, int patch, int index, const BinaryMask& m, double score) {
    const auto path = FileBackedPredictor::mask_path(root, id, patch, index);
    fs::create_directories(path.parent_path());
    io::Tensor t{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 1, {}};
    for (auto b : m.bytes()) t.values.push_back(b ? 1.0f : 0.0f);
    io::write_tensor(path, t);
    auto side = path;
    side.replace_extension(".json");
    std::ofstream(side) << nlohmann::json{{"score", score}}.dump();
}

}  // namespace

TEST_CASE("patch layout defaults and validation") {
    PatchLayout l;
    CHECK(l.patch_size == 512);
    CHECK(l.overlap == 0.5);
    CHECK(l.stride() == 256);
    CHECK_THROWS_AS((PatchLayout{8, 0.5}.validate()), ConfigError);
    CHECK_THROWS_AS((PatchLayout{64, 1.0}.validate()), ConfigError);
}

TEST_CASE("patch boxes tile the image within bounds") {
    for (auto [rows, cols, size] : {std::tuple{1024, 1024, 512}, {700, 300, 256}, {100, 80, 512}, {257, 513, 128}}) {
        const Shape s{rows, cols};
        const auto boxes = patch_boxes(s, {size, 0.5});
        BinaryMask covered(rows, cols);
        for (const auto& b : boxes) {
            CHECK(b.r0 >= 0);
            CHECK(b.c0 >= 0);
            CHECK(b.r1 <= rows);
            CHECK(b.c1 <= cols);
            CHECK(b.r1 - b.r0 == std::min(size, rows));
            CHECK(b.c1 - b.c0 == std::min(size, cols));
            covered = covered | testing::rect(s, b.r0, b.c0, b.r1, b.c1);
        }
        CHECK(covered.count() == static_cast<std::size_t>(rows) * cols);
    }
    CHECK(patch_boxes({1024, 1024}, {}).size() == 9);
}

TEST_CASE("a single patch takes the globally nearest negatives") {
    prompting::PromptSet set;
    set.positives = {{50, 50}};
    set.negatives = {{0, 0}, {50, 60}, {99, 99}, {45, 50}, {50, 41}};
    const auto groups = assign_prompts_to_patches(set, {128, 0.5}, {100, 100}, 2);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].patch == 0);
    CHECK(groups[0].negatives == std::vector<Point>{{45, 50}, {50, 41}});
}

TEST_CASE("default negatives per positive picks the two nearest of four") {
    prompting::PromptSet set;
    set.positives = {{256, 256}};
    set.negatives = {{256, 300}, {200, 256}, {256, 250}, {260, 256}};
    const auto groups = assign_prompts_to_patches(set, {}, {512, 512}, 2);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].negatives == std::vector<Point>{{260, 256}, {256, 250}});
}

TEST_CASE("positives go to the tile with the nearest center") {
    prompting::PromptSet set;
    set.positives = {{10, 10}, {500, 500}, {200, 900}, {20, 20}};
    set.negatives = {{15, 15}, {600, 600}};
    const Shape s{1024, 1024};
    const auto boxes = patch_boxes(s, {});
    const auto groups = assign_prompts_to_patches(set, {}, s, 2);
    REQUIRE(groups.size() == 4);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& p = groups[g].positive;
        auto center_d = [&](const Box& b) {
            const double dr = p.row - (b.r0 + b.r1 - 1) / 2.0, dc = p.col - (b.c0 + b.c1 - 1) / 2.0;
            return dr * dr + dc * dc;
        };
        for (std::size_t k = 0; k < boxes.size(); ++k)
            if (p.row >= boxes[k].r0 && p.row < boxes[k].r1 && p.col >= boxes[k].c0 && p.col < boxes[k].c1)
                CHECK(center_d(boxes[groups[g].patch]) <= center_d(boxes[k]));
        for (const auto& n : groups[g].negatives) {
            const auto& b = boxes[groups[g].patch];
            CHECK((n.row >= b.r0 && n.row < b.r1 && n.col >= b.c0 && n.col < b.c1));
        }
    }
    CHECK(groups[0].patch == 0);
    CHECK(groups[0].index == 0);
    CHECK(groups[3].patch == 0);
    CHECK(groups[3].index == 1);
    CHECK(groups[1].patch == 4);
}

TEST_CASE("oracle predictor matches the region-growing reference") {
    const Shape s{64, 64};
    const auto dark = testing::disk(s, 30, 33, 12);
    const auto img = paint(dark);
    const OraclePredictor oracle(kStains);
    std::string reason;
    const auto pred = oracle.predict(request(img, {30, 33}), reason);
    REQUIRE(pred);
    const auto ref = grow_reference(img, {30, 33}, {}, {});
    CHECK(pred->mask == ref.mask);
    CHECK(pred->score == doctest::Approx(ref.score).epsilon(1e-12));
    CHECK(pred->mask(30, 33));
    CHECK(pred->mask == dark);
}

TEST_CASE("oracle predictor agrees with the reference on textured nuclei") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> level(0.5, 1.2), pos(12, 52), rad(4, 11);
    const Shape s{64, 64};
    for (int t = 0; t < 12; ++t) {
        BinaryMask dark(s.rows, s.cols);
        for (int k = 0; k < 3; ++k) dark = dark | testing::disk(s, pos(rng), pos(rng), rad(rng));
        auto img = paint(dark, level(rng));
        std::normal_distribution<double> noise(0.0, 6.0);
        for (auto& v : img.values()) v = static_cast<std::uint8_t>(std::clamp(v + noise(rng), 0.0, 255.0));
        const Point seed{static_cast<int>(pos(rng)), static_cast<int>(pos(rng))};
        const std::vector<Point> negs{{seed.row, seed.col + 3}, {seed.row - 4, seed.col}};
        std::string reason;
        const auto pred = OraclePredictor(kStains).predict(request(img, seed, negs), reason);
        const auto ref = grow_reference(img, seed, negs, {});
        if (ref.skipped || !pred) {
            CHECK(ref.skipped == !pred);
            continue;
        }
        CHECK(pred->mask == ref.mask);
        CHECK(pred->score == doctest::Approx(ref.score).epsilon(1e-12));
    }
}

TEST_CASE("a wall of negatives truncates growth") {
    const Shape s{64, 64};
    const auto img = paint(testing::disk(s, 32, 32, 14));
    std::vector<Point> wall;
    for (int r = 0; r < 64; ++r) wall.push_back({r, 36});
    std::string reason;
    const auto full = OraclePredictor(kStains).predict(request(img, {32, 28}), reason);
    const auto cut = OraclePredictor(kStains).predict(request(img, {32, 28}, wall), reason);
    REQUIRE(full);
    REQUIRE(cut);
    CHECK(cut->mask.count() < full->mask.count());
    for (int r = 0; r < 64; ++r)
        for (int c = 36; c < 64; ++c) CHECK_FALSE(cut->mask(r, c));
    CHECK(cut->mask == grow_reference(img, {32, 28}, wall, {}).mask);
}

TEST_CASE("growth from a white pixel is skipped with a reason") {
    const Shape s{32, 32};
    const auto img = paint(testing::disk(s, 16, 16, 5));
    std::string reason;
    CHECK_FALSE(OraclePredictor(kStains).predict(request(img, {2, 2}), reason));
    CHECK(reason.find("empty growth") != std::string::npos);
    CHECK_FALSE(OraclePredictor(kStains).predict(request(img, {40, 2}), reason));
    CHECK(reason.find("outside") != std::string::npos);
    CHECK_FALSE(OraclePredictor(kStains).predict(request(img, {16, 16}, {{16, 16}}), reason));
    CHECK(reason.find("negative") != std::string::npos);
}

TEST_CASE("oracle growth stops at the area cap") {
    const Shape s{32, 32};
    const auto img = paint(BinaryMask(s.rows, s.cols, true));
    std::string reason;
    CHECK_FALSE(OraclePredictor(kStains).predict(request(img, {16, 16}), reason));
    CHECK(reason.find("area cap") != std::string::npos);
}

TEST_CASE("file-backed predictor reads masks and sidecars") {
    testing::TempDir dir("filemask");
    const Shape s{16, 20};
    const RasterImage img(s.rows, s.cols, 3, 255);
    const auto m = testing::disk(s, 8, 9, 4);
    write_mask(dir.path(), "img", 3, 1, m, 0.75);
    CHECK(FileBackedPredictor::mask_path(dir.path(), "img", 3, 1) == dir.path() / "img" / "mask_3_1.bin");

    const FileBackedPredictor fb(dir.path());
    PatchRequest req{"img", 3, 1, &img, {8, 9}, {}};
    std::string reason;
    const auto pred = fb.predict(req, reason);
    REQUIRE(pred);
    CHECK(pred->mask == m);
    CHECK(pred->score == 0.75);

    req.index = 2;
    CHECK_FALSE(fb.predict(req, reason));
    CHECK(reason.find("missing mask") != std::string::npos);

    write_mask(dir.path(), "img", 3, 3, testing::disk({10, 10}, 5, 5, 3), 0.5);
    req.index = 3;
    CHECK_FALSE(fb.predict(req, reason));
    CHECK(reason.find("shape") != std::string::npos);

    io::Tensor bad{16, 20, 1, std::vector<float>(320, 0.5f)};
    io::write_tensor(FileBackedPredictor::mask_path(dir.path(), "img", 3, 4), bad);
    req.index = 4;
    CHECK_FALSE(fb.predict(req, reason));
    CHECK(reason.find("0 or 1") != std::string::npos);

    write_mask(dir.path(), "img", 3, 5, m, 0.1);
    fs::remove(dir.path() / "img" / "mask_3_5.json");
    req.index = 5;
    CHECK_FALSE(fb.predict(req, reason));
    CHECK(reason.find("sidecar") != std::string::npos);
}

TEST_CASE("predict_groups stitches masks into image coordinates") {
    const Shape s{96, 96};
    const auto dark = testing::disk(s, 20, 70, 8) | testing::disk(s, 75, 20, 8);
    const auto img = paint(dark);
    const PatchLayout layout{64, 0.5};
    const auto boxes = patch_boxes(s, layout);
    prompting::PromptSet set;
    set.positives = {{20, 70}, {75, 20}, {50, 50}};
    const auto groups = assign_prompts_to_patches(set, layout, s, 2);
    const OraclePredictor oracle(kStains);
    const auto run = predict_groups(img, "img", groups, boxes, oracle);
    REQUIRE(run.instances.size() == 2);
    REQUIRE(run.skipped.size() == 1);
    CHECK(run.skipped[0].reason.find("empty growth") != std::string::npos);
    for (std::size_t k = 0; k < run.instances.size(); ++k) {
        const auto& b = boxes[run.instances.provenance[k]];
        const auto& mb = run.instances.masks[k].box();
        CHECK(mb.r0 >= b.r0);
        CHECK(mb.c0 >= b.c0);
        CHECK(mb.r1 <= b.r1);
        CHECK(mb.c1 <= b.c1);
    }
    CHECK(run.instances.masks[0].to_dense() == testing::disk(s, 20, 70, 8));
    CHECK(run.instances.masks[1].to_dense() == testing::disk(s, 75, 20, 8));

    const auto again = predict_groups(img, "img", groups, boxes, oracle);
    CHECK(again.instances.masks == run.instances.masks);
    CHECK(again.instances.scores == run.instances.scores);
}

TEST_CASE("predictor failures become skipped groups") {
    struct Throwing final : MaskPredictor {
        std::optional<Prediction> predict(const PatchRequest&, std::string&) const override {
            throw std::runtime_error("boom");
        }
    };
    const RasterImage img(32, 32, 3, 255);
    const std::vector<prompting::PromptGroup> groups{{0, 0, {5, 5}, {}}};
    const auto run = predict_groups(img, "x", groups, patch_boxes({32, 32}, {}), Throwing{});
    CHECK(run.instances.size() == 0);
    REQUIRE(run.skipped.size() == 1);
    CHECK(run.skipped[0].reason.find("boom") != std::string::npos);
}

TEST_CASE("merge_overlapped") {
    const Shape s{40, 40};
    SUBCASE("identical masks merge with the max score") {
        const auto d = testing::disk(s, 20, 20, 6);
        const auto out = merge_overlapped(set_of(s, {d, d}, {0.3, 0.9}), 0.8);
        REQUIRE(out.size() == 1);
        CHECK(out.scores[0] == 0.9);
        CHECK(out.provenance[0] == 1);
        CHECK(out.masks[0].to_dense() == d);
    }
    SUBCASE("disjoint masks are unchanged") {
        const auto in = set_of(s, {testing::disk(s, 10, 10, 4), testing::disk(s, 30, 30, 4)}, {0.5, 0.6});
        const auto out = merge_overlapped(in, 0.8);
        CHECK(out.masks == in.masks);
        CHECK(out.scores == in.scores);
    }
    SUBCASE("a chain merges transitively") {
        const auto a = testing::rect(s, 0, 0, 10, 20);
        const auto b = testing::rect(s, 0, 1, 10, 21);
        const auto c = testing::rect(s, 0, 2, 10, 22);
        CHECK(mask_iou(testing::inst(a), testing::inst(b)) >= 0.9);
        const auto out = merge_overlapped(set_of(s, {a, b, c}, {0.1, 0.2, 0.3}), 0.9);
        REQUIRE(out.size() == 1);
        CHECK(out.masks[0].to_dense() == (a | b | c));
        CHECK(out.scores[0] == 0.3);
    }
    SUBCASE("threshold validation") {
        CHECK_THROWS_AS(merge_overlapped(set_of(s, {}, {}), 0.0), ConfigError);
        CHECK_THROWS_AS(merge_overlapped(set_of(s, {}, {}), 1.5), ConfigError);
    }
}

TEST_CASE("merged output has no pair at or above the threshold") {
    std::mt19937_64 rng(10);
    const Shape s{48, 48};
    std::uniform_real_distribution<double> pos(8, 40), rad(3, 8), score(0, 1);
    for (int t = 0; t < 20; ++t) {
        std::vector<BinaryMask> masks;
        std::vector<double> scores;
        for (int k = 0; k < 10; ++k) {
            const double r = pos(rng), c = pos(rng), rr = rad(rng);
            masks.push_back(testing::disk(s, r, c, rr));
            scores.push_back(score(rng));
            if (k % 3 == 0) {
                masks.push_back(testing::disk(s, r + 1, c, rr));
                scores.push_back(score(rng));
            }
        }
        const auto in = set_of(s, masks, scores);
        for (double thr : {0.5, 0.8}) {
            const auto out = merge_overlapped(in, thr);
            CHECK(out.size() <= in.size());
            for (std::size_t i = 0; i < out.size(); ++i)
                for (std::size_t j = i + 1; j < out.size(); ++j) CHECK(mask_iou(out.masks[i], out.masks[j]) < thr);
            BinaryMask uin(s.rows, s.cols), uout(s.rows, s.cols);
            for (const auto& m : in.masks) uin = uin | m.to_dense();
            for (const auto& m : out.masks) uout = uout | m.to_dense();
            CHECK(uin == uout);
            CHECK(*std::max_element(out.scores.begin(), out.scores.end()) ==
                  *std::max_element(in.scores.begin(), in.scores.end()));
        }
    }
}
