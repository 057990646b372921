#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sprout/grid.hpp"
#include "sprout/stain.hpp"
#include "sprout/tensor_io.hpp"

namespace sprout::features {

/// Patch tiling used to build a stitched feature grid. `cell` is the number of
/// pixels per feature cell along each axis.
struct StitchGeometry {
    int patch_size = 128;
    int stride = 64;
    int cell = 8;

    void validate() const;
};

/// h x w x d embedding grid. Row r * w + c of `values` holds cell (r, c).
struct FeatureGrid {
    int h = 0;
    int w = 0;
    StitchGeometry geometry;
    Eigen::MatrixXd values;

    int d() const { return static_cast<int>(values.cols()); }
    int cells() const { return h * w; }
    void validate() const;
};

/// Maps an image patch to a (patch_rows / cell) x (patch_cols / cell) grid of
/// d-dimensional descriptors, returned as a row-major cell-by-feature matrix.
/// Implementations must be deterministic and safe to call concurrently.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual int dim() const = 0;
    virtual Eigen::MatrixXd encode(const RasterImage& patch, int cell) const = 0;
};

/// Model-free descriptor (d = 9): mean RGB, mean s_h, mean s_e, s_h variance,
/// mean s_h gradient magnitude, s_h percentile rank within the patch, bias.
class BuiltinProvider final : public FeatureProvider {
public:
    static constexpr int kDim = 9;

    explicit BuiltinProvider(stain::StainMatrix stains) : stains_(std::move(stains)) {}

    int dim() const override { return kDim; }
    Eigen::MatrixXd encode(const RasterImage& patch, int cell) const override;

private:
    stain::StainMatrix stains_;
};

/// Patch origins along one axis: 0, stride, 2 * stride, ... plus a final patch
/// flush with the far edge when the lattice does not reach it.
std::vector<int> patch_origins(int extent, int patch_size, int stride);

/// Shape of the feature grid produced for an image of the given size.
Shape grid_shape(Shape image, const StitchGeometry& geometry);

/// Replicates border pixels so both sides are cell multiples.
RasterImage pad_to_cells(const RasterImage& image, int cell);

/// Encodes every patch and averages overlapping contributions per cell.
FeatureGrid encode_stitched(const RasterImage& image, const FeatureProvider& provider, const StitchGeometry& geometry);

/// Wraps an externally computed grid; the shape must match `expected`.
FeatureGrid from_tensor(const io::Tensor& tensor, const StitchGeometry& geometry, Shape expected);
io::Tensor to_tensor(const FeatureGrid& grid);

/// A cell is set when at least half of its in-image pixels are set.
BinaryMask resize_mask_majority(const BinaryMask& mask, int cell, Shape grid);

enum class Side : std::uint8_t { fg = 0, bg = 1 };

/// 2K x d prototype matrix, foreground rows first.
struct PrototypeSet {
    Eigen::MatrixXd vectors;
    std::vector<Side> class_of;
    int k_per_class = 0;
};

struct KMeansResult {
    Eigen::MatrixXd centroids;
    std::vector<int> labels;
    /// Sum of squared distances to the nearest centroid, recorded for the
    /// seeded centroids and after every update.
    std::vector<double> objective;
    int iterations = 0;
};

struct KMeansOptions {
    int max_iters = 100;
    double tol = 1e-6;
};

/// Lloyd iterations from a k-means++ seeding. Empty clusters are re-seeded
/// from the point farthest from its centroid.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, KMeansOptions options = {});

double kmeans_objective(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids);

/// Clusters masked cells of each class into k centroids. Masks are already at
/// feature resolution.
PrototypeSet extract_prototypes(const FeatureGrid& features, const BinaryMask& fg, const BinaryMask& bg, int k,
                                std::uint64_t seed);

}  // namespace sprout::features
