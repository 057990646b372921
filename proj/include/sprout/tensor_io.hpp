#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace sprout::io {

/// Dense float32 tensor in the SPRT interchange layout: little-endian header
/// {"SPRT", u32 version = 1, u32 h, u32 w, u32 d} followed by h*w*d float32
/// values in row-major order.
struct Tensor {
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    std::uint32_t d = 0;
    std::vector<float> values;

    float& at(std::uint32_t r, std::uint32_t c, std::uint32_t k) { return values[(std::size_t(r) * w + c) * d + k]; }
    float at(std::uint32_t r, std::uint32_t c, std::uint32_t k) const { return values[(std::size_t(r) * w + c) * d + k]; }
};

inline constexpr std::uint32_t kTensorVersion = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace sprout::io
