#include "sprout/png_io.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <png.h>

#include "sprout/trace.hpp"

namespace sprout::io {
namespace {

using File = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

File open(const std::filesystem::path& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw RuntimeError("cannot open " + path.string());
    return f;
}

[[noreturn]] void on_error(png_structp, png_const_charp msg) { throw RuntimeError(std::string("png: ") + msg); }
void on_warning(png_structp, png_const_charp) {}

struct Decoded {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    int depth = 0;
    std::vector<png_byte> bytes;
};

Decoded decode(const std::filesystem::path& path, bool keep16) {
    trace::record(trace::Access::read, path);
    File f = open(path, "rb");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw RuntimeError(path.string() + " is not a PNG");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (!keep16 && depth == 16) png_set_strip_16(png);
    if (keep16 && depth == 16) png_set_swap(png);
    png_read_update_info(png, info);

    Decoded d;
    d.rows = static_cast<int>(png_get_image_height(png, info));
    d.cols = static_cast<int>(png_get_image_width(png, info));
    d.channels = png_get_channels(png, info);
    d.depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    d.bytes.resize(stride * d.rows);
    std::vector<png_bytep> rows(d.rows);
    for (int r = 0; r < d.rows; ++r) rows[r] = d.bytes.data() + stride * r;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return d;
}

void encode(const std::filesystem::path& path, int rows, int cols, int color, int depth, const png_byte* data,
            std::size_t stride) {
    trace::record(trace::Access::write, path);
    File f = open(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    png_init_io(png, f.get());
    png_set_IHDR(png, info, cols, rows, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (depth == 16) png_set_swap(png);
    for (int r = 0; r < rows; ++r) png_write_row(png, const_cast<png_bytep>(data + stride * r));
    png_write_end(png, nullptr);
}

}  // namespace

RasterImage read_rgb(const std::filesystem::path& path) {
    const Decoded d = decode(path, false);
    RasterImage img(d.rows, d.cols, 3);
    for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) {
            const png_byte* px = d.bytes.data() + (static_cast<std::size_t>(r) * d.cols + c) * d.channels;
            for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = d.channels >= 3 ? px[ch] : px[0];
        }
    return img;
}

void write_rgb(const std::filesystem::path& path, const RasterImage& image) {
    if (image.channels() != 3) throw ConfigError("write_rgb expects 3 channels");
    encode(path, image.rows(), image.cols(), PNG_COLOR_TYPE_RGB, 8, image.data(),
           static_cast<std::size_t>(image.cols()) * 3);
}

LabelMap read_labels(const std::filesystem::path& path) {
    const Decoded d = decode(path, true);
    if (d.channels != 1) throw ConfigError(path.string() + ": label maps must be single-channel");
    LabelMap out(d.rows, d.cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (d.depth == 16) {
            std::uint16_t v;
            std::memcpy(&v, d.bytes.data() + 2 * i, 2);
            out.data()[i] = v;
        } else {
            out.data()[i] = d.bytes[i];
        }
    }
    return out;
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
    encode(path, labels.rows(), labels.cols(), PNG_COLOR_TYPE_GRAY, 16,
           reinterpret_cast<const png_byte*>(labels.data()), static_cast<std::size_t>(labels.cols()) * 2);
}

}  // namespace sprout::io
