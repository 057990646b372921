#include "sprout/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "sprout/grid.hpp"
#include "sprout/trace.hpp"

namespace sprout::io {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'P', 'R', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw RuntimeError("tensor file truncated in header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    const std::size_t n = std::size_t(t.h) * t.w * t.d;
    if (t.values.size() != n) throw ConfigError("tensor value count does not match its shape");
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kTensorVersion);
    put_u32(out, t.h);
    put_u32(out, t.w);
    put_u32(out, t.d);
    for (float f : t.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
    if (!out) throw RuntimeError("failed to write tensor");
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw RuntimeError("not an SPRT tensor (bad magic)");
    const auto version = get_u32(in);
    if (version != kTensorVersion) throw RuntimeError("unsupported SPRT version " + std::to_string(version));
    Tensor t;
    t.h = get_u32(in);
    t.w = get_u32(in);
    t.d = get_u32(in);
    const std::size_t n = std::size_t(t.h) * t.w * t.d;
    if (n > (std::size_t(1) << 34)) throw RuntimeError("SPRT tensor too large");
    t.values.resize(n);
    std::vector<unsigned char> raw(n * 4);
    if (n && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw RuntimeError("tensor file truncated in payload");
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                                (std::uint32_t(b[3]) << 24);
        t.values[i] = std::bit_cast<float>(u);
    }
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    trace::record(trace::Access::write, path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
    write_tensor(out, tensor);
}

Tensor read_tensor(const std::filesystem::path& path) {
    trace::record(trace::Access::read, path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open " + path.string());
    return read_tensor(in);
}

}  // namespace sprout::io
