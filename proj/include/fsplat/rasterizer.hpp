#pragma once

#include "fsplat/camera.hpp"
#include "fsplat/image.hpp"
#include "fsplat/scene.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace fsplat::raster {

struct RasterConfig {
    double near_plane = 0.01;
    double dilation = 0.3;            // px^2 added to the projected covariance diagonal
    double min_transmittance = 1e-4;  // compositing stops before T drops below this
    double max_alpha = 0.99;
    double support_sigma = 3.0;       // Mahalanobis radius of each splat's footprint
    int tile_size = 16;
    int max_feature_dim = 1024;
    bool render_features = true;
    bool tile_gradient_buffer = true; // stage backward gradients per tile, flush once per Gaussian
    int threads = 1;
};

/// A Gaussian after projection into one camera.
struct ProjectedGaussian {
    std::uint32_t index = 0;  // into the scene
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Vec3 conic = Vec3::Zero(); // inverse covariance (a, b, c) = [[a, b], [b, c]]
    double depth = 0.0;
    double opacity = 0.0;
    double radius = 0.0;       // support radius in pixels
    Vec3 color = Vec3::Zero(); // SH color, clamped at 0
    std::array<bool, 3> color_clamped{};
    Vec3 cam_point = Vec3::Zero();
    Vec3 view_dir = Vec3::UnitZ();
    double view_dist = 1.0;
};

/// Projects every Gaussian; entries behind the near plane, with zero opacity, or whose support
/// box misses the image are dropped. Order follows scene indices.
std::vector<ProjectedGaussian> project(const GaussianScene &scene, const Camera &cam, const RasterConfig &cfg = {});
std::vector<ProjectedGaussian> project(const GaussianScene &scene, const Camera &cam, double near_plane);

struct RenderTarget {
    int width = 0;
    int height = 0;
    int feature_dim = 0;
    std::vector<double> color;         // H*W*3
    std::vector<double> feature;       // H*W*feature_dim
    std::vector<double> alpha;         // H*W
    std::vector<double> depth;         // H*W, alpha-weighted camera z
    std::vector<double> transmittance; // H*W, T after the last composited splat
    std::vector<std::uint32_t> contributors; // H*W, tile-list entries consumed

    // Replay data for the backward pass.
    std::vector<ProjectedGaussian> projected; // sorted by (depth, index)
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::uint32_t> tile_offsets; // tiles+1
    std::vector<std::uint32_t> tile_entries; // indices into projected, front to back

    std::size_t pixel(int x, int y) const { return std::size_t(y) * width + x; }
    Vec3 color_at(int x, int y) const {
        const auto p = 3 * pixel(x, y);
        return {color[p], color[p + 1], color[p + 2]};
    }
    std::span<const double> feature_at(int x, int y) const {
        return {feature.data() + pixel(x, y) * feature_dim, std::size_t(feature_dim)};
    }
    ImageF color_image() const;
};

/// Front-to-back tiled splatting of color and (view-independent) features.
RenderTarget rasterize(const GaussianScene &scene, const Camera &cam, const RasterConfig &cfg = {});

/// Same, reading features from a single-precision copy instead of the scene's half storage.
RenderTarget rasterize(const GaussianScene &scene, std::span<const float> features, const Camera &cam,
                       const RasterConfig &cfg = {});

struct SceneGradients {
    std::vector<Vec3> centroid;
    std::vector<Vec3> log_scale;
    std::vector<Quat> rotation;
    std::vector<double> opacity_logit;
    std::vector<double> sh;      // same layout as GaussianScene::sh
    std::vector<double> feature; // N * feature_dim
    std::vector<Vec2> mean2d;    // screen-space gradient, pixels
    std::vector<std::uint8_t> visible;

    void resize(std::size_t n, int sh_count, int feature_dim);
};

struct BackwardOptions {
    /// When false, dL/dF only reaches the features; geometry and opacity see the color loss alone.
    bool feature_to_geometry = true;
};

/// Analytic gradients of a loss L(C, F) given dL/dC (H*W*3) and dL/dF (H*W*feature_dim; may be
/// empty when the target has no features).
SceneGradients rasterize_backward(const GaussianScene &scene, const Camera &cam, const RenderTarget &target,
                                  std::span<const double> dL_dcolor, std::span<const double> dL_dfeature,
                                  const RasterConfig &cfg = {}, const BackwardOptions &opts = {});

SceneGradients rasterize_backward(const GaussianScene &scene, std::span<const float> features, const Camera &cam,
                                  const RenderTarget &target, std::span<const double> dL_dcolor,
                                  std::span<const double> dL_dfeature, const RasterConfig &cfg = {},
                                  const BackwardOptions &opts = {});

/// Projects each pixel feature onto the top three principal components of the pixels with
/// alpha > 0 and min-max normalizes each channel to [0,1]. Channels without variance, and
/// pixels with zero alpha, are 0.5.
ImageF render_feature_pca(const RenderTarget &target);

} // namespace fsplat::raster
