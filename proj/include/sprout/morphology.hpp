#pragma once

#include <cstdint>
#include <vector>

#include "sprout/grid.hpp"

namespace sprout::morph {

/// 0 = background, 1..count = components.
struct Labeling {
    Grid<std::int32_t> labels;
    int count = 0;
    std::vector<std::size_t> areas;  ///< areas[k - 1] is the area of label k
};

/// 8-connected component labeling in raster order of first pixel.
Labeling connected_components(const BinaryMask& mask);

/// Exact Euclidean distance from every set pixel to the nearest unset pixel
/// (pixels outside the grid count as unset). Unset pixels get 0.
ScalarMap distance_transform(const BinaryMask& mask);

/// Plateau-aware local maxima of `field` over `mask` (8-neighborhood), thinned
/// greedily in descending value so that retained peaks are at least
/// `min_separation` pixels apart (Chebyshev distance). Ties resolve in raster
/// order.
std::vector<Point> local_maxima(const ScalarMap& field, const BinaryMask& mask, int min_separation);

/// Marker-controlled priority flood of `elevation` restricted to `mask`.
/// Marker k (1-based) seeds basin k. Pixels unreachable from any marker stay 0.
Grid<std::int32_t> watershed(const ScalarMap& elevation, const std::vector<Point>& markers, const BinaryMask& mask);

/// Dilation with a (2 * radius + 1)^2 square structuring element.
BinaryMask dilate(const BinaryMask& mask, int radius);

enum class Interpolation { nearest, bilinear };

/// Resizes a single-channel map with pixel-center alignment.
ScalarMap resize(const ScalarMap& map, Shape target, Interpolation mode);

/// Separable Gaussian blur with reflected borders; sigma <= 0 is a no-op.
ScalarMap gaussian_blur(const ScalarMap& map, double sigma);

}  // namespace sprout::morph
