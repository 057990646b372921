#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "sprout/grid.hpp"

namespace sprout::stain {

using Vec3 = std::array<double, 3>;

/// Normalized two-stain color basis in optical-density space.
class StainMatrix {
public:
    /// Normalizes both vectors; throws ConfigError on zero vectors, collinear
    /// stains, or non-positive reference intensity.
    StainMatrix(Vec3 h_vector, Vec3 e_vector, Vec3 reference_intensity = {255.0, 255.0, 255.0});

    /// Ruifrok-Johnston H&E vectors with an 8-bit white reference.
    static StainMatrix ruifrok_he();

    const Vec3& h() const { return h_; }
    const Vec3& e() const { return e_; }
    const Vec3& reference() const { return x0_; }

    /// Rows of the 2x3 Moore-Penrose pseudoinverse of [h e].
    const std::array<Vec3, 2>& pseudoinverse() const { return pinv_; }
    double condition_number() const { return cond_; }

private:
    Vec3 h_;
    Vec3 e_;
    Vec3 x0_;
    std::array<Vec3, 2> pinv_{};
    double cond_ = 1.0;
};

/// Optical density, H x W x 3.
using DensityGrid = Grid<double>;

struct StainMaps {
    ScalarMap s_h;
    ScalarMap s_e;
};

DensityGrid to_optical_density(const RasterImage& image, const Vec3& reference_intensity);

/// Inverse of to_optical_density without 8-bit quantization.
Grid<double> from_optical_density(const DensityGrid& od, const Vec3& reference_intensity);

/// Per-pixel least-squares concentrations, negatives clamped to zero.
StainMaps deconvolve(const DensityGrid& od, const StainMatrix& stains);

/// Convenience: optical density followed by deconvolution.
StainMaps decompose(const RasterImage& image, const StainMatrix& stains);

/// Between-class-variance maximizing split over a histogram. Bins [0, t] form
/// the lower class. Ties resolve to the smallest t.
int otsu_threshold(std::span<const double> histogram);

/// Otsu split of raw values through a histogram spanning [lo, hi]. Values in
/// bins above `bin` form the upper class; classifying by bin index keeps the
/// split invariant under positive rescaling of the values.
struct OtsuSplit {
    double lo = 0.0;
    double hi = 0.0;
    int bins = 256;
    int bin = 0;

    int bin_of(double v) const;
    bool upper(double v) const { return bin_of(v) > bin; }
    /// Upper edge of the winning bin in value units.
    double level() const { return lo + (hi - lo) * (bin + 1) / bins; }
};
OtsuSplit otsu_split(std::span<const double> values, int bins = 256);

struct HighConfidenceMasks {
    BinaryMask coarse_fg;
    BinaryMask fg;
    BinaryMask bg;
};

/// Coarse Otsu split of s_h, then the top `ratio` fraction of each side:
/// by s_h inside the coarse foreground and by s_e inside the coarse background.
HighConfidenceMasks high_confidence_masks(const StainMaps& maps, double ratio);

}  // namespace sprout::stain
