#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "sprout/config.hpp"
#include "sprout/features.hpp"
#include "sprout/ot.hpp"
#include "sprout/prompting.hpp"
#include "sprout/stain.hpp"
#include "unit/helpers.hpp"

using namespace sprout;
using prompting::ActivationStack;
using features::Side;

namespace {

ot::TransportPlan plan_from(const Eigen::MatrixXd& values) {
    ot::TransportPlan p;
    p.values = values;
    p.converged = true;
    return p;
}

ActivationStack two_channel(const ScalarMap& fg, const ScalarMap& bg) {
    return {fg.shape(), {fg, bg}, {Side::fg, Side::bg}};
}

ScalarMap as_map(const BinaryMask& m, double on, double off) {
    ScalarMap out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.bytes().size(); ++i) out.data()[i] = m.bytes()[i] ? on : off;
    return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const double u = static_cast<double>((a | b).count());
    return u > 0 ? static_cast<double>((a & b).count()) / u : 1.0;
}

// Steepest ascent on the distance field from every region pixel. Counts the
// terminal plateaus that dominate their min_sep window and drain at least
// min_area pixels.
int steepest_ascent_basins(const BinaryMask& region, int min_sep, std::size_t min_area) {
    const auto dist = morph::distance_transform(region);
    auto step = [&](Point p) {
        Point best = p;
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int r = p.row + dr, c = p.col + dc;
                if (!region.contains(r, c) || !region(r, c)) continue;
                if (dist(r, c) > dist(best.row, best.col)) best = {r, c};
            }
        return best;
    };
    BinaryMask terminal(region.rows(), region.cols());
    Grid<Point> sink(region.rows(), region.cols());
    for (int r = 0; r < region.rows(); ++r)
        for (int c = 0; c < region.cols(); ++c) {
            if (!region(r, c)) continue;
            Point p{r, c};
            for (Point q = step(p); q != p; q = step(p)) p = q;
            terminal.set(p.row, p.col);
            sink(r, c) = p;
        }
    const auto plateaus = morph::connected_components(terminal);
    auto dominates = [&](int r, int c) {
        for (int rr = r - min_sep; rr <= r + min_sep; ++rr)
            for (int cc = c - min_sep; cc <= c + min_sep; ++cc)
                if (region.contains(rr, cc) && region(rr, cc) && dist(rr, cc) > dist(r, c)) return false;
        return true;
    };
    std::map<int, std::size_t> basin_area;
    std::set<int> peaks;
    for (int r = 0; r < region.rows(); ++r)
        for (int c = 0; c < region.cols(); ++c) {
            if (!region(r, c)) continue;
            const int label = plateaus.labels(sink(r, c).row, sink(r, c).col);
            ++basin_area[label];
            if (terminal(r, c) && dominates(r, c)) peaks.insert(label);
        }
    int count = 0;
    for (const auto& [label, area] : basin_area) count += peaks.count(label) && area >= min_area;
    return count;
}

struct DiskScene {
    RasterImage image;
    BinaryMask truth;
};

// Dark hematoxylin disks of radius 16 on a light eosin background.
DiskScene disk_scene(const stain::StainMatrix& q) {
    const Shape s{256, 256};
    DiskScene out{RasterImage(s.rows, s.cols, 3), BinaryMask(s.rows, s.cols)};
    for (int r = 40; r < s.rows; r += 64)
        for (int c = 40; c < s.cols; c += 64) out.truth = out.truth | testing::disk(s, r + (c % 3) * 3, c, 16);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
            for (int k = 0; k < 3; ++k) {
                const double od = out.truth(r, c) ? 0.9 * q.h()[k] + 0.1 * q.e()[k] : 0.3 * q.e()[k];
                out.image(r, c, k) = static_cast<std::uint8_t>(std::lround(255.0 * std::exp(-od)));
            }
    return out;
}

prompting::ClassMaps transport_maps(const RasterImage& image, const config::PipelineConfig& cfg) {
    const auto& geom = cfg.features.geometry;
    const auto maps = stain::decompose(image, cfg.stain_matrix());
    const auto hc = stain::high_confidence_masks(maps, cfg.stain.ratio);
    const auto grid = features::encode_stitched(image, features::BuiltinProvider(cfg.stain_matrix()), geom);
    const Shape gshape{grid.h, grid.w};
    const auto protos = features::extract_prototypes(grid, features::resize_mask_majority(hc.fg, geom.cell, gshape),
                                                     features::resize_mask_majority(hc.bg, geom.cell, gshape),
                                                     cfg.features.prototypes_per_class, 1);
    const auto plan = ot::solve_partial(ot::cosine_cost(grid.values, protos.vectors), cfg.scan.rho0, cfg.scan.solver, nullptr);
    REQUIRE(plan.converged);
    const auto stack = prompting::reweight_and_project(grid.values, gshape, plan, protos.class_of, image.shape(),
                                                       prompting::IdentityRefiner{},
                                                       {morph::Interpolation::bilinear, geom.cell, false});
    return prompting::aggregate_and_binarize(stack);
}

}  // namespace

TEST_CASE("an all-slack plan yields a zero stack") {
    Eigen::MatrixXd feats = Eigen::MatrixXd::Ones(16, 3);
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(16, 3);
    values.col(2).setConstant(1.0 / 16);
    const auto stack = prompting::reweight_and_project(feats, {4, 4}, plan_from(values), {Side::fg, Side::bg}, {8, 8},
                                                       prompting::IdentityRefiner{});
    REQUIRE(stack.maps.size() == 2);
    for (const auto& m : stack.maps)
        for (double v : m.values()) CHECK(v == 0.0);
}

TEST_CASE("reweighting multiplies the feature norm by the plan entry") {
    Eigen::MatrixXd feats(4, 2);
    feats << 3, 4, 0, 1, 1, 0, 6, 8;
    Eigen::MatrixXd values(4, 3);
    values << 0.1, 0.0, 0.15, 0.2, 0.05, 0.0, 0.0, 0.25, 0.0, 0.05, 0.05, 0.15;
    const auto stack = prompting::reweight_and_project(feats, {2, 2}, plan_from(values), {Side::fg, Side::bg}, {2, 2},
                                                       prompting::IdentityRefiner{});
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 4; ++i) CHECK(stack.maps[k].data()[i] == doctest::Approx(feats.row(i).norm() * values(i, k)));
}

TEST_CASE("nearest projection of a 4x4 grid to 8x8 is block constant") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd feats(16, 2), values(16, 3);
    for (int i = 0; i < 16; ++i) {
        feats.row(i) << u(rng), u(rng);
        values.row(i) << u(rng), u(rng), u(rng);
    }
    prompting::ProjectionOptions opt{morph::Interpolation::nearest, 2, false};
    const auto stack = prompting::reweight_and_project(feats, {4, 4}, plan_from(values), {Side::fg, Side::bg}, {8, 8},
                                                       prompting::IdentityRefiner{}, opt);
    for (int k = 0; k < 2; ++k)
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) CHECK(stack.maps[k](r, c) == stack.maps[k](r / 2 * 2, c / 2 * 2));
}

TEST_CASE("cell projection crops a padded grid to the image") {
    Eigen::MatrixXd feats = Eigen::MatrixXd::Ones(9, 1);
    Eigen::MatrixXd values = Eigen::MatrixXd::Constant(9, 3, 1.0 / 27);
    prompting::ProjectionOptions opt{morph::Interpolation::nearest, 4, false};
    const auto stack = prompting::reweight_and_project(feats, {3, 3}, plan_from(values), {Side::fg, Side::bg}, {10, 11},
                                                       prompting::IdentityRefiner{}, opt);
    CHECK(stack.maps[0].shape() == Shape{10, 11});
    opt.cell = 3;
    CHECK_THROWS_AS(prompting::reweight_and_project(feats, {3, 3}, plan_from(values), {Side::fg, Side::bg}, {10, 11},
                                                    prompting::IdentityRefiner{}, opt),
                    ConfigError);
}

TEST_CASE("unconverged plans are rejected unless allowed") {
    Eigen::MatrixXd feats = Eigen::MatrixXd::Ones(4, 1);
    auto plan = plan_from(Eigen::MatrixXd::Constant(4, 3, 1.0 / 12));
    plan.converged = false;
    CHECK_THROWS_AS(prompting::reweight_and_project(feats, {2, 2}, plan, {Side::fg, Side::bg}, {2, 2},
                                                    prompting::IdentityRefiner{}),
                    RuntimeError);
    prompting::ProjectionOptions opt;
    opt.allow_unconverged = true;
    CHECK_NOTHROW(prompting::reweight_and_project(feats, {2, 2}, plan, {Side::fg, Side::bg}, {2, 2},
                                                  prompting::IdentityRefiner{}, opt));
    CHECK_THROWS_AS(prompting::reweight_and_project(feats, {2, 2}, plan_from(Eigen::MatrixXd::Ones(4, 3)), {Side::fg},
                                                    {2, 2}, prompting::IdentityRefiner{}),
                    ConfigError);
}

TEST_CASE("gaussian refiner smooths and identity keeps the map") {
    CHECK(dynamic_cast<prompting::IdentityRefiner*>(prompting::make_refiner(0.0).get()) != nullptr);
    CHECK(dynamic_cast<prompting::GaussianRefiner*>(prompting::make_refiner(1.0).get()) != nullptr);
}

TEST_CASE("aggregation binarizes a clear two-level map") {
    const Shape s{40, 40};
    const auto d = testing::disk(s, 20, 20, 8);
    const auto maps = prompting::aggregate_and_binarize(two_channel(as_map(d, 1.0, 0.1), as_map(~d, 1.0, 0.1)));
    CHECK(maps.fg == d);
    CHECK(maps.bg == ~d);
}

TEST_CASE("duplicating a foreground channel leaves the map unchanged") {
    const Shape s{40, 40};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> noise(0.0, 0.2);
    const auto d = testing::disk(s, 18, 22, 9);
    auto fg = as_map(d, 1.0, 0.1);
    for (auto& v : fg.values()) v += noise(rng);
    const auto bg = as_map(~d, 0.8, 0.0);
    const auto one = prompting::aggregate_and_binarize(two_channel(fg, bg));
    const ActivationStack doubled{s, {fg, fg, bg}, {Side::fg, Side::fg, Side::bg}};
    const auto two = prompting::aggregate_and_binarize(doubled);
    CHECK(one.fg == two.fg);
    CHECK(one.bg == two.bg);
}

TEST_CASE("aggregation is invariant to a positive scale") {
    const Shape s{30, 30};
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScalarMap fg(s.rows, s.cols), bg(s.rows, s.cols);
    for (auto& v : fg.values()) v = u(rng);
    for (auto& v : bg.values()) v = u(rng);
    const auto base = prompting::aggregate_and_binarize(two_channel(fg, bg));
    for (double k : {0.5, 3.0, 1e3}) {
        auto f2 = fg, b2 = bg;
        for (auto& v : f2.values()) v *= k;
        for (auto& v : b2.values()) v *= k;
        const auto scaled = prompting::aggregate_and_binarize(two_channel(f2, b2));
        CHECK(scaled.fg == base.fg);
        CHECK(scaled.bg == base.bg);
    }
}

TEST_CASE("foreground and background maps are disjoint") {
    const Shape s{30, 30};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
        ScalarMap fg(s.rows, s.cols), bg(s.rows, s.cols);
        for (auto& v : fg.values()) v = u(rng);
        for (auto& v : bg.values()) v = u(rng);
        const auto maps = prompting::aggregate_and_binarize(two_channel(fg, bg));
        CHECK((maps.fg & maps.bg).count() == 0);
    }
}

TEST_CASE("an all-zero class aggregate is an error naming the class") {
    const Shape s{10, 10};
    ScalarMap zero(s.rows, s.cols), one(s.rows, s.cols, 1, 1.0);
    CHECK_THROWS_WITH_AS(prompting::aggregate_and_binarize(two_channel(zero, one)),
                         doctest::Contains("foreground"), RuntimeError);
    CHECK_THROWS_WITH_AS(prompting::aggregate_and_binarize(two_channel(one, zero)),
                         doctest::Contains("background"), RuntimeError);
}

TEST_CASE("the transport chain recovers synthetic disks") {
    const config::PipelineConfig cfg;
    const auto scene = disk_scene(cfg.stain_matrix());
    const auto cm = transport_maps(scene.image, cfg);
    CHECK(iou(cm.fg, scene.truth) > 0.8);
    const auto negatives = prompting::negative_points(cm.bg, cm.fg, 32, cfg.prompting.negative_margin);
    CHECK(!negatives.empty());
    for (const auto& p : negatives) CHECK_FALSE(scene.truth(p.row, p.col));
}

TEST_CASE("a single disk gives one positive at its center") {
    const Shape s{41, 41};
    const auto d = testing::disk(s, 20, 20, 12);
    const auto res = prompting::positive_points(d, BinaryMask(s.rows, s.cols));
    REQUIRE(res.points.size() == 1);
    CHECK(std::abs(res.points[0].row - 20) <= 1);
    CHECK(std::abs(res.points[0].col - 20) <= 1);
}

TEST_CASE("two disks give two positives, one in each") {
    const Shape s{40, 70};
    const auto a = testing::disk(s, 20, 18, 11);
    const auto b = testing::disk(s, 20, 50, 11);
    const auto res = prompting::positive_points(a | b, BinaryMask(s.rows, s.cols));
    REQUIRE(res.points.size() == 2);
    CHECK(a(res.points[0].row, res.points[0].col) != a(res.points[1].row, res.points[1].col));
    for (const auto& p : res.points) CHECK((a | b)(p.row, p.col));
}

TEST_CASE("two disks joined by a thin neck still give two positives") {
    const Shape s{40, 70};
    const auto region = testing::disk(s, 20, 20, 11) | testing::disk(s, 20, 48, 11) | testing::rect(s, 19, 20, 22, 48);
    REQUIRE(morph::connected_components(region).count == 1);
    const prompting::PositiveOptions opt;
    const auto res = prompting::positive_points(region, BinaryMask(s.rows, s.cols), opt);
    CHECK(static_cast<int>(res.points.size()) == steepest_ascent_basins(region, opt.min_separation, opt.min_area));
    REQUIRE(res.points.size() == 2);
    CHECK(std::min(res.points[0].col, res.points[1].col) < 34);
    CHECK(std::max(res.points[0].col, res.points[1].col) > 34);
}

TEST_CASE("positives lie inside the foreground union and basins are small-area filtered") {
    std::mt19937_64 rng(8);
    const Shape s{64, 64};
    std::uniform_real_distribution<double> pos(8, 56), rad(2, 9);
    for (int t = 0; t < 15; ++t) {
        BinaryMask fg(s.rows, s.cols), hc(s.rows, s.cols);
        for (int k = 0; k < 4; ++k) fg = fg | testing::disk(s, pos(rng), pos(rng), rad(rng));
        hc = testing::disk(s, pos(rng), pos(rng), rad(rng));
        const auto res = prompting::positive_points(fg, hc);
        const auto region = fg | hc;
        std::set<int> seen;
        for (const auto& p : res.points) {
            REQUIRE(region(p.row, p.col));
            const int basin = res.regions(p.row, p.col);
            CHECK(basin > 0);
            CHECK(seen.insert(basin).second);
        }
        for (int r = 0; r < s.rows; ++r)
            for (int c = 0; c < s.cols; ++c)
                if (!region(r, c)) CHECK(res.regions(r, c) == 0);
    }
}

TEST_CASE("the high-confidence union can be switched off") {
    const Shape s{40, 40};
    const auto hc = testing::disk(s, 20, 20, 8);
    CHECK(prompting::positive_points(BinaryMask(s.rows, s.cols), hc).points.size() == 1);
    prompting::PositiveOptions opt;
    opt.union_with_high_confidence = false;
    CHECK(prompting::positive_points(BinaryMask(s.rows, s.cols), hc, opt).points.empty());
}

TEST_CASE("negative lattice over full background") {
    for (auto [rows, cols, stride] : {std::tuple{64, 64, 32}, {70, 45, 16}, {10, 10, 3}}) {
        const BinaryMask bg(rows, cols, true);
        const auto pts = prompting::negative_points(bg, BinaryMask(rows, cols), stride, 0);
        const auto want = ((rows + stride - 1) / stride) * ((cols + stride - 1) / stride);
        CHECK(static_cast<int>(pts.size()) == want);
        for (const auto& p : pts) CHECK((p.row % stride == 0 && p.col % stride == 0));
    }
}

TEST_CASE("empty background gives no negatives") {
    const BinaryMask none(50, 50);
    CHECK(prompting::negative_points(none, none, 8, 0).empty());
    CHECK_THROWS_AS(prompting::negative_points(none, none, 0, 0), ConfigError);
}

TEST_CASE("negatives avoid the foreground even with a margin") {
    const Shape s{96, 96};
    BinaryMask fg(s.rows, s.cols);
    for (int r = 16; r < 96; r += 32)
        for (int c = 16; c < 96; c += 32) fg = fg | testing::disk(s, r, c, 9);
    const auto bg = ~fg;
    for (int margin : {0, 5, 20}) {
        const auto pts = prompting::negative_points(bg, fg, 8, margin);
        CHECK(!pts.empty());
        for (const auto& p : pts) CHECK(!fg(p.row, p.col));
    }
}

TEST_CASE("merge stop probe") {
    const Shape s{100, 100};
    BinaryMask ten(s.rows, s.cols);
    for (int k = 0; k < 10; ++k) ten = ten | testing::rect(s, 2 + 9 * k, 2, 6 + 9 * k, 6);
    const prompting::StopProbeConfig cfg;

    SUBCASE("first step never fires") {
        const auto out = prompting::merge_stop_probe(testing::rect(s, 0, 0, 60, 60), 0, cfg);
        CHECK_FALSE(out.fired);
        CHECK(out.components == 1);
    }
    SUBCASE("constant count never fires") {
        const auto out = prompting::merge_stop_probe(ten, 10, cfg);
        CHECK(out.components == 10);
        CHECK_FALSE(out.fired);
    }
    SUBCASE("ten to three with a 30 percent component fires") {
        auto three = testing::rect(s, 0, 40, 50, 100);  // 50 x 60 = 30%
        three = three | testing::rect(s, 80, 0, 84, 4) | testing::rect(s, 90, 0, 94, 4);
        const auto out = prompting::merge_stop_probe(three, 10, cfg);
        CHECK(out.components == 3);
        CHECK(out.largest_fraction == doctest::Approx(0.3));
        CHECK(out.fired);
        prompting::StopProbeConfig loose = cfg;
        loose.area_cap = 0.5;
        CHECK_FALSE(prompting::merge_stop_probe(three, 10, loose).fired);
    }
    SUBCASE("a drop smaller than merge_k does not fire") {
        const auto big = testing::rect(s, 0, 0, 60, 60);
        CHECK_FALSE(prompting::merge_stop_probe(big, 2, cfg).fired);
        CHECK(prompting::merge_stop_probe(big, 3, cfg).fired);
    }
}

TEST_CASE("prompt sets validate and round-trip through JSON") {
    prompting::PromptSet set;
    set.image_id = "img_0001";
    set.positives = {{3, 4}, {10, 12}};
    set.negatives = {{0, 0}, {31, 31}};
    set.groups = {{1, 0, {3, 4}, {{0, 0}}}, {2, 0, {10, 12}, {{31, 31}, {0, 0}}}};
    CHECK_NOTHROW(set.validate({32, 32}));
    const auto back = prompting::prompts_from_json(nlohmann::json::parse(prompting::to_json(set).dump()));
    CHECK(back.image_id == set.image_id);
    CHECK(back.positives == set.positives);
    CHECK(back.negatives == set.negatives);
    REQUIRE(back.groups.size() == 2);
    CHECK(back.groups[1].patch == 2);
    CHECK(back.groups[1].negatives == set.groups[1].negatives);

    CHECK_THROWS_AS(set.validate({20, 20}), ConfigError);
    auto clash = set;
    clash.negatives.push_back({3, 4});
    CHECK_THROWS_AS(clash.validate({32, 32}), ConfigError);
    CHECK_THROWS_AS(prompting::prompts_from_json(nlohmann::json::parse(R"({"image_id":"x","positives":[[1]],"negatives":[]})")),
                    ConfigError);
}
