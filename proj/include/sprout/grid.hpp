#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sprout {

/// Raised when a configuration or input violates a documented precondition.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a pipeline stage fails on valid configuration.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape {
    int rows = 0;
    int cols = 0;

    std::size_t area() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    friend bool operator==(const Shape&, const Shape&) = default;
};

struct Point {
    int row = 0;
    int col = 0;
    friend bool operator==(const Point&, const Point&) = default;
    friend auto operator<=>(const Point&, const Point&) = default;
};

/// Row-major rows x cols x channels grid.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int rows, int cols, int channels = 1, T fill = T{})
        : rows_(rows), cols_(cols), channels_(channels),
          data_(static_cast<std::size_t>(rows) * cols * channels, fill) {
        if (rows < 0 || cols < 0 || channels < 1)
            throw ConfigError("grid dimensions must be non-negative with at least one channel");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int channels() const { return channels_; }
    Shape shape() const { return {rows_, cols_}; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T& operator()(int r, int c, int ch = 0) { return data_[index(r, c, ch)]; }
    const T& operator()(int r, int c, int ch = 0) const { return data_[index(r, c, ch)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t index(int r, int c, int ch) const {
        return (static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch;
    }

    int rows_ = 0;
    int cols_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

/// 8-bit interleaved RGB pixels.
using RasterImage = Grid<std::uint8_t>;
/// Single-channel real-valued map.
using ScalarMap = Grid<double>;

/// H x W boolean grid stored as bytes (0/1).
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int rows, int cols, bool fill = false) : grid_(rows, cols, 1, fill ? 1 : 0) {}

    int rows() const { return grid_.rows(); }
    int cols() const { return grid_.cols(); }
    Shape shape() const { return grid_.shape(); }
    bool contains(int r, int c) const { return grid_.contains(r, c); }

    bool operator()(int r, int c) const { return grid_(r, c) != 0; }
    void set(int r, int c, bool v = true) { grid_(r, c) = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : grid_.values()) n += v;
        return n;
    }
    bool any() const {
        for (auto v : grid_.values())
            if (v) return true;
        return false;
    }

    const std::vector<std::uint8_t>& bytes() const { return grid_.values(); }
    std::vector<std::uint8_t>& bytes() { return grid_.values(); }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    Grid<std::uint8_t> grid_;
};

inline BinaryMask operator|(const BinaryMask& a, const BinaryMask& b) {
    if (a.shape() != b.shape()) throw ConfigError("mask shape mismatch");
    BinaryMask out = a;
    for (std::size_t i = 0; i < out.bytes().size(); ++i) out.bytes()[i] |= b.bytes()[i];
    return out;
}

inline BinaryMask operator&(const BinaryMask& a, const BinaryMask& b) {
    if (a.shape() != b.shape()) throw ConfigError("mask shape mismatch");
    BinaryMask out = a;
    for (std::size_t i = 0; i < out.bytes().size(); ++i) out.bytes()[i] &= b.bytes()[i];
    return out;
}

inline BinaryMask operator~(const BinaryMask& a) {
    BinaryMask out = a;
    for (auto& v : out.bytes()) v = v ? 0 : 1;
    return out;
}

}  // namespace sprout
