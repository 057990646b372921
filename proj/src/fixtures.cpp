#include "sprout/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "sprout/png_io.hpp"
#include "sprout/trace.hpp"

namespace sprout::fixtures {

void FixtureSpec::validate() const {
    if (rows < 16 || cols < 16) throw ConfigError("fixture size must be at least 16x16");
    if (images < 0) throw ConfigError("fixture image count must be >= 0");
    if (nuclei_min < 0 || nuclei_max < nuclei_min) throw ConfigError("fixture nuclei range is invalid");
    if (!(radius_min >= 2.0 && radius_max >= radius_min)) throw ConfigError("fixture radius range is invalid");
    if (!(axis_ratio_min > 0.0 && axis_ratio_min <= 1.0)) throw ConfigError("axis_ratio_min must lie in (0, 1]");
    if (!(h_min > 0.0 && h_max >= h_min)) throw ConfigError("fixture hematoxylin range is invalid");
    if (!(e_background_min >= 0.0 && e_background_max >= e_background_min))
        throw ConfigError("fixture eosin range is invalid");
    if (e_nucleus < 0.0 || texture < 0.0 || noise < 0.0) throw ConfigError("fixture intensities must be >= 0");
    if (!(overlap_probability >= 0.0 && overlap_probability <= 1.0))
        throw ConfigError("overlap_probability must lie in [0, 1]");
    if (!(max_overlap_fraction >= 0.0 && max_overlap_fraction <= 0.5))
        throw ConfigError("max_overlap_fraction must lie in [0, 0.5]");
    if (min_gap < 0) throw ConfigError("min_gap must be >= 0");
}

FixtureSpec parse_spec(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("fixture spec is not valid YAML: ") + e.what());
    }
    FixtureSpec s;
    if (!root || root.IsNull()) return s;
    if (!root.IsMap()) throw ConfigError("fixture spec must be a mapping");
    const std::set<std::string> known{"rows",        "cols",           "images",           "nuclei_min",
                                      "nuclei_max",  "radius_min",     "radius_max",       "axis_ratio_min",
                                      "h_min",       "h_max",          "e_nucleus",        "e_background_min",
                                      "e_background_max", "texture",   "overlap_probability",
                                      "max_overlap_fraction", "min_gap", "noise"};
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in fixture spec");
    }
    auto get = [&](const char* key, auto& out) {
        if (root[key]) out = root[key].as<std::decay_t<decltype(out)>>();
    };
    get("rows", s.rows);
    get("cols", s.cols);
    get("images", s.images);
    get("nuclei_min", s.nuclei_min);
    get("nuclei_max", s.nuclei_max);
    get("radius_min", s.radius_min);
    get("radius_max", s.radius_max);
    get("axis_ratio_min", s.axis_ratio_min);
    get("h_min", s.h_min);
    get("h_max", s.h_max);
    get("e_nucleus", s.e_nucleus);
    get("e_background_min", s.e_background_min);
    get("e_background_max", s.e_background_max);
    get("texture", s.texture);
    get("overlap_probability", s.overlap_probability);
    get("max_overlap_fraction", s.max_overlap_fraction);
    get("min_gap", s.min_gap);
    get("noise", s.noise);
    s.validate();
    return s;
}

FixtureSpec load_spec(const std::filesystem::path& path) {
    trace::record(trace::Access::read, path);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read fixture spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str());
}

bool Ellipse::contains(double r, double c) const {
    const double dr = r - row, dc = c - col;
    const double u = dc * std::cos(theta) + dr * std::sin(theta);
    const double v = -dc * std::sin(theta) + dr * std::cos(theta);
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

namespace {

std::vector<Point> raster(const Ellipse& e, Shape shape) {
    std::vector<Point> px;
    const int r0 = std::max(0, static_cast<int>(std::floor(e.row - e.a - 1)));
    const int r1 = std::min(shape.rows - 1, static_cast<int>(std::ceil(e.row + e.a + 1)));
    const int c0 = std::max(0, static_cast<int>(std::floor(e.col - e.a - 1)));
    const int c1 = std::min(shape.cols - 1, static_cast<int>(std::ceil(e.col + e.a + 1)));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
            if (e.contains(r, c)) px.push_back({r, c});
    return px;
}

struct Placement {
    Shape shape;
    int gap;
    Grid<std::int32_t> owner;  ///< 1-based nucleus index, 0 = free

    /// True when every pixel keeps `gap` clearance from nuclei other than
    /// `partner` (0 = none).
    bool clear(const std::vector<Point>& px, int partner) const {
        for (const auto& p : px)
            for (int dr = -gap; dr <= gap; ++dr)
                for (int dc = -gap; dc <= gap; ++dc) {
                    const int r = p.row + dr, c = p.col + dc;
                    if (!owner.contains(r, c)) continue;
                    const int o = owner(r, c);
                    if (o != 0 && o != partner) return false;
                }
        return true;
    }
};

}  // namespace

Fixture render(const FixtureSpec& spec, std::uint64_t seed, const stain::StainMatrix& stains) {
    spec.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const Shape shape{spec.rows, spec.cols};
    const int target = std::uniform_int_distribution<int>(spec.nuclei_min, spec.nuclei_max)(rng);

    const double mean_r = 0.5 * (spec.radius_min + spec.radius_max) + spec.min_gap;
    const double demand = target * std::numbers::pi * mean_r * mean_r * (1.0 + spec.axis_ratio_min) / 2.0;
    if (demand > 0.6 * static_cast<double>(shape.area()))
        throw RuntimeError("infeasible density: " + std::to_string(target) + " nuclei do not fit");

    Fixture fx;
    fx.labels = LabelMap(shape.rows, shape.cols);
    Placement place{shape, spec.min_gap, Grid<std::int32_t>(shape.rows, shape.cols)};
    std::vector<bool> paired;
    const int max_pairs = static_cast<int>(std::floor(spec.max_overlap_fraction * target));
    const double margin = spec.radius_max + 1.0;

    auto make = [&](double row, double col) {
        Ellipse e;
        e.row = row;
        e.col = col;
        e.a = uniform(spec.radius_min, spec.radius_max);
        e.b = e.a * uniform(spec.axis_ratio_min, 1.0);
        e.theta = uniform(0.0, std::numbers::pi);
        e.h = uniform(spec.h_min, spec.h_max);
        return e;
    };

    for (int n = 0; n < target; ++n) {
        const bool want_overlap = !fx.nuclei.empty() && static_cast<int>(fx.overlapping.size()) < max_pairs &&
                                  uniform(0.0, 1.0) < spec.overlap_probability;
        bool placed = false;
        for (int attempt = 0; attempt < 4000 && !placed; ++attempt) {
            Ellipse e;
            int partner = 0;
            if (want_overlap && attempt < 200) {
                partner = std::uniform_int_distribution<int>(1, static_cast<int>(fx.nuclei.size()))(rng);
                if (paired[partner - 1]) continue;
                const Ellipse& p = fx.nuclei[partner - 1];
                const double angle = uniform(0.0, 2.0 * std::numbers::pi);
                e = make(0.0, 0.0);
                // Centers ~0.8 of the summed radii apart give a modest lens.
                const double dist = uniform(0.75, 0.85) * (std::min(p.a, p.b) + std::min(e.a, e.b));
                e.row = p.row + dist * std::sin(angle);
                e.col = p.col + dist * std::cos(angle);
                if (e.row < margin || e.col < margin || e.row > shape.rows - 1 - margin ||
                    e.col > shape.cols - 1 - margin)
                    continue;
            } else {
                e = make(uniform(margin, shape.rows - 1 - margin), uniform(margin, shape.cols - 1 - margin));
            }
            const auto px = raster(e, shape);
            if (px.empty() || !place.clear(px, partner)) continue;
            if (partner) {
                std::size_t shared = 0;
                for (const auto& p : px) shared += place.owner(p.row, p.col) == partner;
                const std::size_t partner_area =
                    std::count(place.owner.values().begin(), place.owner.values().end(), partner);
                if (shared == 0 || shared * 4 > std::min(px.size(), partner_area)) continue;
            }
            const int id = static_cast<int>(fx.nuclei.size()) + 1;
            for (const auto& p : px) place.owner(p.row, p.col) = id;
            fx.nuclei.push_back(e);
            paired.push_back(partner != 0);
            if (partner) {
                paired[partner - 1] = true;
                fx.overlapping.emplace_back(partner - 1, id - 1);
            }
            placed = true;
        }
        if (!placed)
            throw RuntimeError("infeasible density: placed " + std::to_string(fx.nuclei.size()) + " of " +
                               std::to_string(target) + " nuclei");
    }

    // Concentration maps; hematoxylin adds up where nuclei overlap.
    ScalarMap ch(shape.rows, shape.cols), ce(shape.rows, shape.cols);
    const double e_base = uniform(spec.e_background_min, spec.e_background_max);
    std::array<double, 12> wave{};
    for (auto& w : wave) w = uniform(0.0, 1.0);
    for (int r = 0; r < shape.rows; ++r)
        for (int c = 0; c < shape.cols; ++c) {
            double t = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double fr = 0.01 + 0.04 * wave[4 * k], fc = 0.01 + 0.04 * wave[4 * k + 1];
                t += std::sin(2.0 * std::numbers::pi * (fr * r + fc * c + wave[4 * k + 2]));
            }
            ce(r, c) = std::max(0.0, e_base + spec.texture * t / 3.0);
        }
    for (std::size_t k = 0; k < fx.nuclei.size(); ++k)
        for (const auto& p : raster(fx.nuclei[k], shape)) {
            ch(p.row, p.col) += fx.nuclei[k].h;
            ce(p.row, p.col) = spec.e_nucleus;
            fx.labels(p.row, p.col) = static_cast<std::uint16_t>(k + 1);
        }

    std::normal_distribution<double> noise(0.0, 1.0);
    fx.image = RasterImage(shape.rows, shape.cols, 3);
    const auto& hv = stains.h();
    const auto& ev = stains.e();
    const auto& x0 = stains.reference();
    for (int r = 0; r < shape.rows; ++r)
        for (int c = 0; c < shape.cols; ++c)
            for (int k = 0; k < 3; ++k) {
                const double od = ch(r, c) * hv[k] + ce(r, c) * ev[k] + spec.noise * noise(rng);
                const double v = x0[k] * std::exp(-od);
                fx.image(r, c, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
    fx.h_concentration = std::move(ch);
    return fx;
}

std::string fixture_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fixture_%03d", index);
    return buf;
}

void generate(const FixtureSpec& spec, std::uint64_t seed, const std::filesystem::path& out,
              const stain::StainMatrix& stains) {
    spec.validate();
    std::filesystem::create_directories(out / "images");
    std::filesystem::create_directories(out / "gt");
    for (int i = 0; i < spec.images; ++i) {
        const Fixture fx = render(spec, seed + static_cast<std::uint64_t>(i), stains);
        const auto stem = fixture_stem(i);
        io::write_rgb(out / "images" / (stem + ".png"), fx.image);
        io::write_labels(out / "gt" / (stem + ".png"), fx.labels);
    }
}

}  // namespace sprout::fixtures
