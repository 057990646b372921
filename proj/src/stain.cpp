#include "sprout/stain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace sprout::stain {

namespace {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 normalized(const Vec3& v, const char* name) {
    const double n = norm(v);
    if (!(n > 0.0) || !std::isfinite(n))
        throw ConfigError(std::string("stain vector ") + name + " must be finite and non-zero");
    return {v[0] / n, v[1] / n, v[2] / n};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

}  // namespace

StainMatrix::StainMatrix(Vec3 h_vector, Vec3 e_vector, Vec3 reference_intensity)
    : h_(normalized(h_vector, "h")), e_(normalized(e_vector, "e")), x0_(reference_intensity) {
    for (double x : x0_)
        if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("reference intensity must be positive");

    const Vec3 cross{h_[1] * e_[2] - h_[2] * e_[1], h_[2] * e_[0] - h_[0] * e_[2],
                     h_[0] * e_[1] - h_[1] * e_[0]};
    if (norm(cross) <= 1e-6) throw ConfigError("stain vectors are linearly dependent");

    // Gram matrix G = Q^T Q for unit columns: [[1, c], [c, 1]].
    const double c = dot(h_, e_);
    const double det = 1.0 - c * c;
    // Singular values of Q are sqrt(1 +- |c|).
    cond_ = std::sqrt((1.0 + std::abs(c)) / (1.0 - std::abs(c)));
    if (!(det > 0.0) || cond_ > 1e8) throw ConfigError("stain matrix is degenerate (condition number > 1e8)");

    // Q+ = G^{-1} Q^T.
    for (int k = 0; k < 3; ++k) {
        pinv_[0][k] = (h_[k] - c * e_[k]) / det;
        pinv_[1][k] = (e_[k] - c * h_[k]) / det;
    }
}

StainMatrix StainMatrix::ruifrok_he() {
    return StainMatrix({0.650, 0.704, 0.286}, {0.072, 0.990, 0.105}, {255.0, 255.0, 255.0});
}

DensityGrid to_optical_density(const RasterImage& image, const Vec3& x0) {
    if (image.channels() != 3) throw ConfigError("optical density expects an RGB image");
    for (double x : x0)
        if (!(x > 0.0)) throw ConfigError("reference intensity must be positive");

    // 8-bit lookup: zero pixels are lifted to 1 before the log.
    std::array<std::array<double, 256>, 3> lut{};
    for (int ch = 0; ch < 3; ++ch)
        for (int v = 0; v < 256; ++v) {
            const double x = std::min(std::max(1.0, static_cast<double>(v)), x0[ch]);
            lut[ch][v] = std::max(0.0, -std::log(x / x0[ch]));
        }

    DensityGrid od(image.rows(), image.cols(), 3);
    const auto* src = image.data();
    auto* dst = od.data();
    for (std::size_t i = 0; i < image.size(); ++i) dst[i] = lut[i % 3][src[i]];
    return od;
}

Grid<double> from_optical_density(const DensityGrid& od, const Vec3& x0) {
    Grid<double> out(od.rows(), od.cols(), od.channels());
    for (std::size_t i = 0; i < od.size(); ++i) out.data()[i] = std::exp(-od.data()[i]) * x0[i % 3];
    return out;
}

StainMaps deconvolve(const DensityGrid& od, const StainMatrix& stains) {
    if (od.channels() != 3) throw ConfigError("deconvolution expects a 3-channel density grid");
    const auto& p = stains.pseudoinverse();
    StainMaps maps{ScalarMap(od.rows(), od.cols()), ScalarMap(od.rows(), od.cols())};
    const double* src = od.data();
    for (std::size_t i = 0; i < od.shape().area(); ++i, src += 3) {
        const double h = p[0][0] * src[0] + p[0][1] * src[1] + p[0][2] * src[2];
        const double e = p[1][0] * src[0] + p[1][1] * src[1] + p[1][2] * src[2];
        maps.s_h.data()[i] = std::max(0.0, h);
        maps.s_e.data()[i] = std::max(0.0, e);
    }
    return maps;
}

StainMaps decompose(const RasterImage& image, const StainMatrix& stains) {
    return deconvolve(to_optical_density(image, stains.reference()), stains);
}

int otsu_threshold(std::span<const double> histogram) {
    const int bins = static_cast<int>(histogram.size());
    double total = 0.0;
    double weighted = 0.0;
    int nonempty = 0;
    for (int i = 0; i < bins; ++i) {
        if (histogram[i] < 0.0 || !std::isfinite(histogram[i]))
            throw ConfigError("histogram counts must be finite and non-negative");
        total += histogram[i];
        weighted += i * histogram[i];
        nonempty += histogram[i] > 0.0;
    }
    if (nonempty < 2) throw RuntimeError("no separating threshold: histogram has fewer than two non-empty bins");

    const double mean_total = weighted / total;
    int best = -1;
    double best_var = -1.0;
    double w0 = 0.0;
    double sum0 = 0.0;
    for (int t = 0; t < bins - 1; ++t) {
        w0 += histogram[t] / total;
        sum0 += t * histogram[t] / total;
        const double w1 = 1.0 - w0;
        if (w0 <= 0.0 || w1 <= 1e-15) continue;
        const double m0 = sum0 / w0;
        const double m1 = (mean_total - sum0) / w1;
        const double var = w0 * (m0 - mean_total) * (m0 - mean_total) + w1 * (m1 - mean_total) * (m1 - mean_total);
        // Relative tolerance keeps plateaus stable under count rescaling.
        if (var > best_var * (1.0 + 1e-12) + 1e-300) {
            best_var = var;
            best = t;
        }
    }
    if (best < 0) throw RuntimeError("no separating threshold");
    return best;
}

int OtsuSplit::bin_of(double v) const {
    const double t = (v - lo) / (hi - lo);
    return std::clamp(static_cast<int>(t * bins), 0, bins - 1);
}

OtsuSplit otsu_split(std::span<const double> values, int bins) {
    if (values.empty()) throw RuntimeError("no separating threshold: empty input");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (!(*mx > *mn)) throw RuntimeError("no separating threshold: constant input");
    OtsuSplit split{*mn, *mx, bins, 0};
    std::vector<double> hist(bins, 0.0);
    for (double v : values) hist[split.bin_of(v)] += 1.0;
    split.bin = otsu_threshold(hist);
    return split;
}

namespace {

// Keeps the `ratio` fraction of `region` pixels with the largest `score`.
// Ties at the cut are broken by raster order so the count is exact.
BinaryMask top_fraction(const BinaryMask& region, const ScalarMap& score, double ratio) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < region.bytes().size(); ++i)
        if (region.bytes()[i]) idx.push_back(i);
    const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return score.data()[a] > score.data()[b]; });
    BinaryMask out(region.rows(), region.cols());
    for (std::size_t k = 0; k < keep; ++k) out.bytes()[idx[k]] = 1;
    return out;
}

}  // namespace

HighConfidenceMasks high_confidence_masks(const StainMaps& maps, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("high-confidence ratio must lie in (0, 1]");
    const auto& sh = maps.s_h;
    const std::span<const double> values(sh.data(), sh.size());

    const OtsuSplit split = [&] {
        try {
            return otsu_split(values);
        } catch (const RuntimeError&) {
            throw RuntimeError("empty coarse region: foreground and background (s_h is constant)");
        }
    }();

    BinaryMask coarse(sh.rows(), sh.cols());
    for (std::size_t i = 0; i < sh.size(); ++i) coarse.bytes()[i] = split.upper(sh.data()[i]);

    const std::size_t fg_count = coarse.count();
    if (fg_count == 0) throw RuntimeError("empty coarse region: foreground");
    if (fg_count == sh.size()) throw RuntimeError("empty coarse region: background");

    HighConfidenceMasks out;
    out.fg = top_fraction(coarse, sh, ratio);
    out.bg = top_fraction(~coarse, maps.s_e, ratio);
    out.coarse_fg = std::move(coarse);
    return out;
}

}  // namespace sprout::stain
