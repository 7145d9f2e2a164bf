#include "fsplat/image.hpp"

#include "fsplat/binary.hpp"
#include "fsplat/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fsplat {

Image8 to_image8(const ImageF &img) {
    Image8 out(img.width, img.height, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

ImageF to_imagef(const Image8 &img) {
    ImageF out(img.width, img.height, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
    return out;
}

namespace {

int color_type_for(int channels) {
    switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGBA;
    default: fail(ErrorCode::Contract, "PNG supports 1, 3 or 4 channels");
    }
}

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void read_cb(png_structp png, png_bytep out, png_size_t n) {
    auto *cur = static_cast<ReadCursor *>(png_get_io_ptr(png));
    if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated PNG");
    std::memcpy(out, cur->bytes.data() + cur->pos, n);
    cur->pos += n;
}

void write_cb(png_structp png, png_bytep data, png_size_t n) {
    auto *out = static_cast<std::vector<std::uint8_t> *>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

} // namespace

std::vector<std::uint8_t> encode_png(const Image8 &img) {
    const int color_type = color_type_for(img.channels);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::Io, "libpng initialization failed");
    }
    std::vector<std::uint8_t> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::Io, "PNG encoding failed");
    }
    png_set_write_fn(png, &out, write_cb, flush_cb);
    png_set_IHDR(png, info, img.width, img.height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = std::size_t(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.data.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail(ErrorCode::Format, "not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::Io, "libpng initialization failed");
    }
    ReadCursor cursor{bytes, 0};
    Image8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::Format, "corrupt PNG");
    }
    png_set_read_fn(png, &cursor, read_cb);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_expand(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    img = Image8(w, h, c);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = img.data.data() + std::size_t(y) * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const Image8 &img, const std::filesystem::path &path) { binary::write_file(path, encode_png(img)); }

Image8 read_png(const std::filesystem::path &path) { return decode_png(binary::read_file(path)); }

} // namespace fsplat
