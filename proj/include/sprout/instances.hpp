#pragma once

#include <cstdint>
#include <vector>

#include "sprout/grid.hpp"

namespace sprout {

/// Half-open pixel box [r0, r1) x [c0, c1).
struct Box {
    int r0 = 0;
    int c0 = 0;
    int r1 = 0;
    int c1 = 0;

    bool empty() const { return r1 <= r0 || c1 <= c0; }
    long long area() const { return empty() ? 0 : static_cast<long long>(r1 - r0) * (c1 - c0); }
    friend bool operator==(const Box&, const Box&) = default;
};

Box intersect(const Box& a, const Box& b);
double box_iou(const Box& a, const Box& b);

/// Binary instance mask stored as a tight bounding box plus local bits, in the
/// coordinate frame of an image of shape `image_shape()`.
class InstanceMask {
public:
    InstanceMask() = default;

    static InstanceMask from_dense(const BinaryMask& mask);
    /// Pixels given in image coordinates; duplicates are ignored.
    static InstanceMask from_pixels(Shape image, const std::vector<Point>& pixels);

    Shape image_shape() const { return shape_; }
    const Box& box() const { return box_; }
    std::size_t area() const { return area_; }
    bool empty() const { return area_ == 0; }

    bool at(int r, int c) const {
        if (r < box_.r0 || r >= box_.r1 || c < box_.c0 || c >= box_.c1) return false;
        return bits_[static_cast<std::size_t>(r - box_.r0) * (box_.c1 - box_.c0) + (c - box_.c0)] != 0;
    }

    BinaryMask to_dense() const;
    std::vector<Point> pixels() const;

    /// Pixel union; both masks must share the image shape.
    InstanceMask united(const InstanceMask& other) const;

    friend bool operator==(const InstanceMask&, const InstanceMask&) = default;

private:
    Shape shape_;
    Box box_;
    std::vector<std::uint8_t> bits_;
    std::size_t area_ = 0;
};

std::size_t intersection_area(const InstanceMask& a, const InstanceMask& b);
double mask_iou(const InstanceMask& a, const InstanceMask& b);

/// Masks with scores and the patch each mask came from (-1 when unknown).
struct InstanceSet {
    Shape shape;
    std::vector<InstanceMask> masks;
    std::vector<double> scores;
    std::vector<int> provenance;

    std::size_t size() const { return masks.size(); }
    void add(InstanceMask mask, double score, int patch = -1);
    /// Throws ConfigError when lengths differ, a mask is empty, or shapes mismatch.
    void validate() const;
};

using LabelMap = Grid<std::uint16_t>;

/// One instance per distinct non-zero label, ordered by label value.
InstanceSet instances_from_labels(const LabelMap& labels);

/// Rasterizes masks in the given order; later masks claim only unclaimed
/// pixels. Instances that end up with fewer than `min_area` claimed pixels are
/// dropped and the remaining ids stay consecutive from 1.
LabelMap rasterize(const InstanceSet& set, const std::vector<std::size_t>& order, std::size_t min_area = 1);

}  // namespace sprout
