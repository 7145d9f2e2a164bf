#pragma once

#include "fsplat/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fsplat {

constexpr int kDefaultShDegree = 3;
constexpr int kDefaultFeatureDim = 32;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One Gaussian in array-of-structs form, used for construction and inspection.
/// Parameters live in their optimization spaces: log-scale, raw quaternion, opacity logit.
struct Gaussian {
    Vec3 centroid = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Quat rotation = identity_quat();
    double opacity_logit = 0.0;
    std::vector<Vec3> sh;       // (L+1)^2 RGB triples
    std::vector<Half> feature;  // feature_dim entries
};

/// Activated quantities derived from a Gaussian's raw parameters.
struct Activation {
    Vec3 scale;
    Mat3 rotation;
    double opacity;
    Mat3 covariance;
};

Activation activate(const Vec3 &log_scale, const Quat &rotation, double opacity_logit);
Activation activate(const Gaussian &g);

struct SceneMetadata {
    double scene_scale = 1.0;
    std::string units = "world";
};

/// The Gaussian mixture, stored structure-of-arrays.
///
/// `sh` holds size()*sh_count()*3 doubles, Gaussian-major then coefficient then channel.
/// `features` holds size()*feature_dim() half floats, Gaussian-major.
class GaussianScene {
public:
    explicit GaussianScene(int sh_degree = kDefaultShDegree, int feature_dim = kDefaultFeatureDim);

    std::size_t size() const { return centroids.size(); }
    bool empty() const { return centroids.empty(); }
    int sh_degree() const { return sh_degree_; }
    int sh_count() const { return sh_coeff_count(sh_degree_); }
    int feature_dim() const { return feature_dim_; }

    void reserve(std::size_t n);
    void clear();

    /// Appends a Gaussian; missing SH/feature entries are zero-filled, extra ones rejected.
    void push_back(const Gaussian &g);
    Gaussian gaussian(std::size_t i) const;

    /// Appends Gaussian `i` of `other` (which must share sh_degree and feature_dim).
    void append_from(const GaussianScene &other, std::size_t i);

    std::span<double> sh_of(std::size_t i) { return {sh.data() + i * sh_count() * 3, std::size_t(sh_count()) * 3}; }
    std::span<const double> sh_of(std::size_t i) const {
        return {sh.data() + i * sh_count() * 3, std::size_t(sh_count()) * 3};
    }
    std::span<Half> feature_of(std::size_t i) {
        return {features.data() + i * feature_dim_, std::size_t(feature_dim_)};
    }
    std::span<const Half> feature_of(std::size_t i) const {
        return {features.data() + i * feature_dim_, std::size_t(feature_dim_)};
    }

    double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }

    /// Keeps only the Gaussians whose index appears in `keep` (sorted ascending).
    GaussianScene subset(std::span<const std::size_t> keep) const;

    /// Throws ValidationError listing every Gaussian with a non-finite parameter,
    /// and Error(Contract) if array sizes disagree.
    void validate() const;

    /// Axis-aligned bounds of the centroids; zero box when empty.
    std::pair<Vec3, Vec3> bounds() const;

    bool operator==(const GaussianScene &other) const;

    std::vector<Vec3> centroids;
    std::vector<Vec3> log_scales;
    std::vector<Quat> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> sh;
    std::vector<Half> features;
    SceneMetadata metadata;

private:
    int sh_degree_;
    int feature_dim_;
};

/// Bitwise equality of every field, including half-precision features and NaN payloads.
bool bitwise_equal(const GaussianScene &a, const GaussianScene &b);

/// "FSPL" scene file.
///
/// Layout (little-endian):
///   header, 64 bytes: "FSPL" | u32 version | u32 sh_degree | u32 feature_dim | u64 count |
///                     f64 scene_scale | char[32] units (zero padded)
///   then, only when count > 0, tagged chunks: char[4] tag | u64 byte length | payload
///     "CENT" f64[3][N]   centroids, one column per axis
///     "LSCL" f64[3][N]   log scales
///     "ROTQ" f64[4][N]   quaternions (w, x, y, z)
///     "OPAC" f64[N]      opacity logits
///     "SHCF" f64[K*3][N] SH coefficients, one column per (coefficient, channel)
///     "FEAT" u16[D][N]   IEEE half features, one column per feature channel
/// Unknown chunk tags are skipped on load.
constexpr std::uint32_t kSceneFileVersion = 1;
constexpr std::size_t kSceneHeaderSize = 64;

void save_scene(const GaussianScene &scene, const std::filesystem::path &path);
GaussianScene load_scene(const std::filesystem::path &path);

std::vector<std::uint8_t> encode_scene(const GaussianScene &scene);
GaussianScene decode_scene(std::span<const std::uint8_t> bytes);

} // namespace fsplat
