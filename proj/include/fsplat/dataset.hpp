#pragma once

#include "fsplat/camera.hpp"
#include "fsplat/image.hpp"
#include "fsplat/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fsplat {

/// H x W x D feature map, pixel-major with channels contiguous.
template <typename T>
struct FeatureMapT {
    int height = 0;
    int width = 0;
    int dim = 0;
    std::vector<T> data;

    FeatureMapT() = default;
    FeatureMapT(int h, int w, int d) : height(h), width(w), dim(d), data(std::size_t(h) * w * d, T(0)) {}
    std::span<T> at(int x, int y) { return {data.data() + (std::size_t(y) * width + x) * dim, std::size_t(dim)}; }
    std::span<const T> at(int x, int y) const {
        return {data.data() + (std::size_t(y) * width + x) * dim, std::size_t(dim)};
    }
};

using FeatureMap = FeatureMapT<Half>;   // on-disk / stored precision
using FeatureMapD = FeatureMapT<double>; // working precision

FeatureMapD to_double(const FeatureMap &m);
FeatureMap to_half(const FeatureMapD &m);

/// Bilinear resampling (align-corners=false convention) to the given resolution.
FeatureMapD resize_bilinear(const FeatureMapD &m, int height, int width);

/// Binary mask at image resolution, one byte per pixel (0 or 1).
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits(std::size_t(h) * w, 0) {}
    bool at(int x, int y) const { return bits[std::size_t(y) * width + x] != 0; }
    std::size_t count() const;
};

/// Run lengths over the row-major pixel sequence, alternating and starting with a run of zeros.
std::vector<std::uint32_t> rle_encode(const BinaryMask &mask);
/// Throws Error(Format) unless the runs sum to exactly height*width.
BinaryMask rle_decode(int height, int width, std::span<const std::uint32_t> runs);

/// masks/NNN.rle: u32 mask_count, then per mask: u32 H | u32 W | u32 run_count | u32 runs[run_count].
std::vector<std::uint8_t> encode_masks(const std::vector<BinaryMask> &masks);
std::vector<BinaryMask> decode_masks(std::span<const std::uint8_t> bytes);

/// clip/NNN.bin, dino/NNN.bin: u32 H | u32 W | u32 D | u16 half[H*W*D].
std::vector<std::uint8_t> encode_feature_map(const FeatureMap &m);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes);

using Vocabulary = std::map<std::string, Eigen::VectorXd>;

struct DatasetView {
    Camera camera;
    Image8 rgb;
    FeatureMap clip;
    FeatureMap dino;
    std::vector<BinaryMask> masks;
};

struct FeatureDataset {
    std::vector<DatasetView> views;
    Vocabulary vocab;
    std::vector<int> holdout; // indices of validation views

    std::vector<int> training_views() const;
    /// Vocabulary vectors must be unit norm (1e-3); masks must match each view's RGB size.
    void validate() const;
};

/// Directory layout: cameras.json, rgb/NNN.png, clip/NNN.bin, dino/NNN.bin, masks/NNN.rle, vocab.json.
FeatureDataset load_dataset(const std::filesystem::path &dir);
void save_dataset(const FeatureDataset &ds, const std::filesystem::path &dir);

Vocabulary load_vocab(const std::filesystem::path &path);
void save_vocab(const Vocabulary &vocab, const std::filesystem::path &path);

} // namespace fsplat
