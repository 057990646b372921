#include "sprout/instances.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <string>

namespace sprout {

Box intersect(const Box& a, const Box& b) {
    return {std::max(a.r0, b.r0), std::max(a.c0, b.c0), std::min(a.r1, b.r1), std::min(a.c1, b.c1)};
}

double box_iou(const Box& a, const Box& b) {
    const long long inter = intersect(a, b).area();
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

InstanceMask InstanceMask::from_dense(const BinaryMask& mask) {
    InstanceMask m;
    m.shape_ = mask.shape();
    Box box{mask.rows(), mask.cols(), 0, 0};
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
            if (mask(r, c)) {
                box.r0 = std::min(box.r0, r);
                box.c0 = std::min(box.c0, c);
                box.r1 = std::max(box.r1, r + 1);
                box.c1 = std::max(box.c1, c + 1);
            }
    if (box.empty()) return m;
    m.box_ = box;
    m.bits_.assign(static_cast<std::size_t>(box.area()), 0);
    const int w = box.c1 - box.c0;
    for (int r = box.r0; r < box.r1; ++r)
        for (int c = box.c0; c < box.c1; ++c)
            if (mask(r, c)) {
                m.bits_[static_cast<std::size_t>(r - box.r0) * w + (c - box.c0)] = 1;
                ++m.area_;
            }
    return m;
}

InstanceMask InstanceMask::from_pixels(Shape image, const std::vector<Point>& pixels) {
    InstanceMask m;
    m.shape_ = image;
    Box box{image.rows, image.cols, 0, 0};
    for (const auto& p : pixels) {
        if (p.row < 0 || p.col < 0 || p.row >= image.rows || p.col >= image.cols)
            throw ConfigError("instance pixel outside the image");
        box.r0 = std::min(box.r0, p.row);
        box.c0 = std::min(box.c0, p.col);
        box.r1 = std::max(box.r1, p.row + 1);
        box.c1 = std::max(box.c1, p.col + 1);
    }
    if (box.empty()) return m;
    m.box_ = box;
    m.bits_.assign(static_cast<std::size_t>(box.area()), 0);
    const int w = box.c1 - box.c0;
    for (const auto& p : pixels) {
        auto& bit = m.bits_[static_cast<std::size_t>(p.row - box.r0) * w + (p.col - box.c0)];
        m.area_ += bit == 0;
        bit = 1;
    }
    return m;
}

BinaryMask InstanceMask::to_dense() const {
    BinaryMask out(shape_.rows, shape_.cols);
    for (int r = box_.r0; r < box_.r1; ++r)
        for (int c = box_.c0; c < box_.c1; ++c)
            if (at(r, c)) out.set(r, c);
    return out;
}

std::vector<Point> InstanceMask::pixels() const {
    std::vector<Point> out;
    out.reserve(area_);
    for (int r = box_.r0; r < box_.r1; ++r)
        for (int c = box_.c0; c < box_.c1; ++c)
            if (at(r, c)) out.push_back({r, c});
    return out;
}

InstanceMask InstanceMask::united(const InstanceMask& other) const {
    if (shape_ != other.shape_) throw ConfigError("cannot unite masks of different image shapes");
    auto px = pixels();
    const auto more = other.pixels();
    px.insert(px.end(), more.begin(), more.end());
    return from_pixels(shape_, px);
}

std::size_t intersection_area(const InstanceMask& a, const InstanceMask& b) {
    const Box box = intersect(a.box(), b.box());
    if (box.empty()) return 0;
    std::size_t n = 0;
    for (int r = box.r0; r < box.r1; ++r)
        for (int c = box.c0; c < box.c1; ++c) n += a.at(r, c) && b.at(r, c);
    return n;
}

double mask_iou(const InstanceMask& a, const InstanceMask& b) {
    const std::size_t inter = intersection_area(a, b);
    const std::size_t uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

void InstanceSet::add(InstanceMask mask, double score, int patch) {
    masks.push_back(std::move(mask));
    scores.push_back(score);
    provenance.push_back(patch);
}

void InstanceSet::validate() const {
    if (masks.size() != scores.size() || masks.size() != provenance.size())
        throw ConfigError("instance set has mismatched mask/score/provenance lengths");
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].empty()) throw ConfigError("instance " + std::to_string(i) + " is empty");
        if (masks[i].image_shape() != shape) throw ConfigError("instance " + std::to_string(i) + " has wrong shape");
    }
}

InstanceSet instances_from_labels(const LabelMap& labels) {
    std::map<std::uint16_t, std::vector<Point>> groups;
    for (int r = 0; r < labels.rows(); ++r)
        for (int c = 0; c < labels.cols(); ++c)
            if (labels(r, c) != 0) groups[labels(r, c)].push_back({r, c});
    InstanceSet set{labels.shape(), {}, {}, {}};
    for (const auto& [id, px] : groups) set.add(InstanceMask::from_pixels(labels.shape(), px), 1.0, -1);
    return set;
}

LabelMap rasterize(const InstanceSet& set, const std::vector<std::size_t>& order, std::size_t min_area) {
    if (order.size() > std::numeric_limits<std::uint16_t>::max())
        throw RuntimeError("too many instances for a 16-bit label map");
    LabelMap labels(set.shape.rows, set.shape.cols, 1, 0);
    std::uint16_t next = 1;
    std::vector<Point> claimed;
    for (std::size_t idx : order) {
        const auto& m = set.masks.at(idx);
        claimed.clear();
        for (const auto& p : m.pixels())
            if (labels(p.row, p.col) == 0) claimed.push_back(p);
        if (claimed.size() < std::max<std::size_t>(1, min_area)) continue;
        for (const auto& p : claimed) labels(p.row, p.col) = next;
        ++next;
    }
    return labels;
}

}  // namespace sprout
