#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fsplat {

/// 8-bit interleaved image.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> data;

    Image8() = default;
    Image8(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0) {}
    std::uint8_t &at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
    std::uint8_t at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
};

/// Double-precision interleaved image, values nominally in [0, 1].
struct ImageF {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    ImageF() = default;
    ImageF(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.0) {}
    double &at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
};

/// Clamps to [0,1] and rounds to 8 bits.
Image8 to_image8(const ImageF &img);
ImageF to_imagef(const Image8 &img);

std::vector<std::uint8_t> encode_png(const Image8 &img);
Image8 decode_png(std::span<const std::uint8_t> bytes);
void write_png(const Image8 &img, const std::filesystem::path &path);
Image8 read_png(const std::filesystem::path &path);

} // namespace fsplat
