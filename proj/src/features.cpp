#include "sprout/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace sprout::features {

void StitchGeometry::validate() const {
    if (cell < 1) throw ConfigError("feature cell size must be >= 1");
    if (patch_size < cell || patch_size % cell != 0)
        throw ConfigError("feature patch size must be a positive multiple of the cell size");
    if (stride < 1 || stride > patch_size) throw ConfigError("feature stride must lie in [1, patch size]");
    if (stride % cell != 0) throw ConfigError("feature stride must be a multiple of the cell size");
}

void FeatureGrid::validate() const {
    if (h < 1 || w < 1) throw ConfigError("feature grid must have at least one cell");
    if (values.rows() != static_cast<Eigen::Index>(h) * w) throw ConfigError("feature grid row count mismatch");
    if (values.cols() < 2) throw ConfigError("feature dimension must be >= 2");
    if (!values.allFinite()) throw RuntimeError("feature grid contains non-finite values");
}

Eigen::MatrixXd BuiltinProvider::encode(const RasterImage& patch, int cell) const {
    if (cell < 1 || patch.rows() % cell != 0 || patch.cols() % cell != 0)
        throw ConfigError("cell size must divide the patch size");
    const int gh = patch.rows() / cell;
    const int gw = patch.cols() / cell;
    const auto maps = stain::decompose(patch, stains_);
    const auto& sh = maps.s_h;
    const double px = static_cast<double>(cell) * cell;

    Eigen::MatrixXd out(gh * gw, kDim);
    for (int gr = 0; gr < gh; ++gr) {
        for (int gc = 0; gc < gw; ++gc) {
            double rgb[3] = {0, 0, 0};
            double mh = 0, me = 0, mh2 = 0, grad = 0;
            for (int r = gr * cell; r < (gr + 1) * cell; ++r) {
                for (int c = gc * cell; c < (gc + 1) * cell; ++c) {
                    for (int ch = 0; ch < 3; ++ch) rgb[ch] += patch(r, c, ch);
                    const double h = sh(r, c);
                    mh += h;
                    mh2 += h * h;
                    me += maps.s_e(r, c);
                    // Forward differences restricted to the cell.
                    const double dr = r + 1 < (gr + 1) * cell ? sh(r + 1, c) - h : 0.0;
                    const double dc = c + 1 < (gc + 1) * cell ? sh(r, c + 1) - h : 0.0;
                    grad += std::sqrt(dr * dr + dc * dc);
                }
            }
            mh /= px;
            const int row = gr * gw + gc;
            out(row, 0) = rgb[0] / (255.0 * px);
            out(row, 1) = rgb[1] / (255.0 * px);
            out(row, 2) = rgb[2] / (255.0 * px);
            out(row, 3) = mh;
            out(row, 4) = me / px;
            out(row, 5) = std::max(0.0, mh2 / px - mh * mh);
            out(row, 6) = grad / px;
            out(row, 8) = 1.0;
        }
    }

    // Percentile rank of each cell's mean s_h among the patch cells.
    const int n = gh * gw;
    std::vector<double> sorted(out.col(3).data(), out.col(3).data() + n);
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) {
        const double v = out(i, 3);
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
        const auto hi = std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
        out(i, 7) = n > 1 ? (static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo - 1)) / (n - 1) : 0.5;
    }
    return out;
}

std::vector<int> patch_origins(int extent, int patch_size, int stride) {
    if (patch_size > extent) throw ConfigError("patch size exceeds image extent");
    std::vector<int> origins;
    for (int o = 0; o + patch_size <= extent; o += stride) origins.push_back(o);
    if (origins.back() + patch_size < extent) origins.push_back(extent - patch_size);
    return origins;
}

Shape grid_shape(Shape image, const StitchGeometry& g) {
    return {(image.rows + g.cell - 1) / g.cell, (image.cols + g.cell - 1) / g.cell};
}

RasterImage pad_to_cells(const RasterImage& image, int cell) {
    const int rows = (image.rows() + cell - 1) / cell * cell;
    const int cols = (image.cols() + cell - 1) / cell * cell;
    if (rows == image.rows() && cols == image.cols()) return image;
    RasterImage out(rows, cols, image.channels());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            for (int ch = 0; ch < image.channels(); ++ch)
                out(r, c, ch) = image(std::min(r, image.rows() - 1), std::min(c, image.cols() - 1), ch);
    return out;
}

namespace {

RasterImage crop(const RasterImage& image, int r0, int c0, int rows, int cols) {
    RasterImage out(rows, cols, image.channels());
    for (int r = 0; r < rows; ++r) {
        const auto* src = &image(r0 + r, c0, 0);
        std::copy(src, src + static_cast<std::size_t>(cols) * image.channels(), &out(r, 0, 0));
    }
    return out;
}

}  // namespace

FeatureGrid encode_stitched(const RasterImage& image, const FeatureProvider& provider, const StitchGeometry& geometry) {
    geometry.validate();
    if (geometry.patch_size > std::min(image.rows(), image.cols()))
        throw ConfigError("feature patch size exceeds the image");
    const RasterImage padded = pad_to_cells(image, geometry.cell);
    const Shape gs = grid_shape(image.shape(), geometry);
    const int d = provider.dim();
    const int pc = geometry.patch_size / geometry.cell;

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(gs.area(), d);
    Eigen::VectorXd hits = Eigen::VectorXd::Zero(gs.area());
    for (int r0 : patch_origins(padded.rows(), geometry.patch_size, geometry.stride)) {
        for (int c0 : patch_origins(padded.cols(), geometry.patch_size, geometry.stride)) {
            const auto enc = provider.encode(crop(padded, r0, c0, geometry.patch_size, geometry.patch_size),
                                             geometry.cell);
            if (enc.rows() != pc * pc || enc.cols() != d)
                throw RuntimeError("feature provider output has shape " + std::to_string(enc.rows()) + "x" +
                                   std::to_string(enc.cols()) + ", expected " + std::to_string(pc * pc) + "x" +
                                   std::to_string(d));
            const int gr0 = r0 / geometry.cell;
            const int gc0 = c0 / geometry.cell;
            for (int i = 0; i < pc; ++i)
                for (int j = 0; j < pc; ++j) {
                    const int row = (gr0 + i) * gs.cols + gc0 + j;
                    sum.row(row) += enc.row(i * pc + j);
                    hits(row) += 1.0;
                }
        }
    }
    if ((hits.array() < 1.0).any()) throw RuntimeError("patch lattice left feature cells uncovered");

    FeatureGrid grid{gs.rows, gs.cols, geometry, sum.array().colwise() / hits.array()};
    grid.validate();
    return grid;
}

FeatureGrid from_tensor(const io::Tensor& t, const StitchGeometry& geometry, Shape expected) {
    if (static_cast<int>(t.h) != expected.rows || static_cast<int>(t.w) != expected.cols)
        throw ConfigError("external feature grid is " + std::to_string(t.h) + "x" + std::to_string(t.w) +
                          ", geometry requires " + std::to_string(expected.rows) + "x" +
                          std::to_string(expected.cols));
    FeatureGrid grid{expected.rows, expected.cols, geometry, Eigen::MatrixXd(expected.area(), t.d)};
    for (Eigen::Index i = 0; i < grid.values.rows(); ++i)
        for (std::uint32_t k = 0; k < t.d; ++k) grid.values(i, k) = t.values[i * t.d + k];
    grid.validate();
    return grid;
}

io::Tensor to_tensor(const FeatureGrid& grid) {
    io::Tensor t{static_cast<std::uint32_t>(grid.h), static_cast<std::uint32_t>(grid.w),
                 static_cast<std::uint32_t>(grid.d()), {}};
    t.values.reserve(grid.values.size());
    for (Eigen::Index i = 0; i < grid.values.rows(); ++i)
        for (Eigen::Index k = 0; k < grid.values.cols(); ++k) t.values.push_back(static_cast<float>(grid.values(i, k)));
    return t;
}

BinaryMask resize_mask_majority(const BinaryMask& mask, int cell, Shape grid) {
    BinaryMask out(grid.rows, grid.cols);
    for (int gr = 0; gr < grid.rows; ++gr)
        for (int gc = 0; gc < grid.cols; ++gc) {
            int total = 0, set = 0;
            for (int r = gr * cell; r < std::min((gr + 1) * cell, mask.rows()); ++r)
                for (int c = gc * cell; c < std::min((gc + 1) * cell, mask.cols()); ++c) {
                    ++total;
                    set += mask(r, c);
                }
            out.set(gr, gc, total > 0 && 2 * set >= total);
        }
    return out;
}

double kmeans_objective(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        total += (centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff();
    return total;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, KMeansOptions options) {
    const Eigen::Index n = points.rows();
    if (k < 1) throw ConfigError("k must be >= 1");
    if (n < k) throw ConfigError("k-means needs at least k points");

    std::mt19937_64 rng(seed);
    KMeansResult res;
    res.centroids.resize(k, points.cols());

    // k-means++ seeding.
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    res.centroids.row(0) = points.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (points.row(i) - res.centroids.row(c - 1)).squaredNorm());
            total += d2[i];
        }
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                u -= d2[pick];
                if (u < 0.0) break;
            }
        } else {
            pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
        }
        res.centroids.row(c) = points.row(pick);
    }

    res.labels.assign(n, 0);
    std::vector<double> dist(n, 0.0);
    auto assign = [&] {
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best;
            dist[i] = (res.centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
            res.labels[i] = static_cast<int>(best);
            obj += dist[i];
        }
        return obj;
    };

    res.objective.push_back(assign());
    for (res.iterations = 0; res.iterations < options.max_iters;) {
        ++res.iterations;
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> count(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            next.row(res.labels[i]) += points.row(i);
            ++count[res.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (count[c] > 0) {
                next.row(c) /= count[c];
            } else {
                const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
                next.row(c) = points.row(far);
                dist[far] = 0.0;
            }
        }
        const double shift = (next - res.centroids).rowwise().norm().maxCoeff();
        res.centroids = std::move(next);
        res.objective.push_back(assign());
        if (shift < options.tol) break;
    }
    return res;
}

PrototypeSet extract_prototypes(const FeatureGrid& features, const BinaryMask& fg, const BinaryMask& bg, int k,
                                std::uint64_t seed) {
    features.validate();
    const Shape gs{features.h, features.w};
    if (fg.shape() != gs || bg.shape() != gs) throw ConfigError("prototype masks must match the feature grid shape");

    PrototypeSet set;
    set.k_per_class = k;
    set.vectors.resize(2 * k, features.d());
    const BinaryMask* masks[2] = {&fg, &bg};
    const char* names[2] = {"foreground", "background"};
    for (int side = 0; side < 2; ++side) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < masks[side]->bytes().size(); ++i)
            if (masks[side]->bytes()[i]) rows.push_back(static_cast<Eigen::Index>(i));
        if (static_cast<int>(rows.size()) < k)
            throw RuntimeError(std::string("too few masked ") + names[side] + " cells for k-means (" +
                               std::to_string(rows.size()) + " < " + std::to_string(k) + ")");
        Eigen::MatrixXd pts(rows.size(), features.d());
        for (std::size_t i = 0; i < rows.size(); ++i) pts.row(i) = features.values.row(rows[i]);
        const auto km = kmeans(pts, k, seed + static_cast<std::uint64_t>(side));
        set.vectors.middleRows(side * k, k) = km.centroids;
        for (int c = 0; c < k; ++c) set.class_of.push_back(static_cast<Side>(side));
    }
    for (Eigen::Index r = 0; r < set.vectors.rows(); ++r)
        if (set.vectors.row(r).squaredNorm() == 0.0) throw RuntimeError("prototype collapsed to the zero vector");
    return set;
}

}  // namespace sprout::features
