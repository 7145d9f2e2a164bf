#pragma once

#include "fsplat/dataset.hpp"
#include "fsplat/image.hpp"
#include "fsplat/log.hpp"
#include "fsplat/rasterizer.hpp"
#include "fsplat/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fsplat {

namespace distill {

// ---------------------------------------------------------------------------------------------
// Reference features

struct EnhancedFeatureMap {
    FeatureMapD map;                  // image resolution
    std::vector<std::uint16_t> parts; // masks covering each pixel
    int skipped_masks = 0;            // empty masks
};

/// Masked average pooling of a CLIP map over part masks at image resolution. The map is first
/// upsampled bilinearly when its resolution differs from the masks'. Each mask's pooled vector
/// is the mean of the unit-normalized features it covers; a pixel in several masks takes the mean
/// of their pooled vectors; uncovered pixels keep the upsampled raw feature.
EnhancedFeatureMap masked_average_pool(const FeatureMapD &clip, const std::vector<BinaryMask> &masks);

// ---------------------------------------------------------------------------------------------
// Decode head: d -> hidden (ReLU) -> {clip, dino}

/// Without biases the head is positively homogeneous, so decoded directions do not
/// depend on feature magnitude or on the coverage of a rendered pixel.
class DecodeHead {
public:
    DecodeHead() = default;
    DecodeHead(int input_dim, int hidden, int clip_dim, int dino_dim, std::uint64_t seed, bool bias = false);

    /// Identity-like head for tests: clip branch copies the first min(dim) inputs of ReLU(x).
    static DecodeHead passthrough(int dim, int dino_dim = 1);

    int input_dim() const { return int(w1.cols()); }
    int hidden() const { return int(w1.rows()); }
    int clip_dim() const { return int(wc.rows()); }
    int dino_dim() const { return int(wd.rows()); }

    /// Columns of `x` are inputs; returns decoded columns.
    void forward(const Eigen::MatrixXd &x, Eigen::MatrixXd &clip, Eigen::MatrixXd &dino) const;
    Eigen::VectorXd decode_clip(const Eigen::VectorXd &x) const;

    struct Grad {
        Eigen::MatrixXd w1, wc, wd;
        Eigen::VectorXd b1, bc, bd;
    };
    /// Back-propagates column gradients of both branches; returns dL/dx and accumulates parameter
    /// gradients into `g` (which must be zero-initialized or hold earlier contributions).
    Eigen::MatrixXd backward(const Eigen::MatrixXd &x, const Eigen::MatrixXd &dclip, const Eigen::MatrixXd &ddino,
                             Grad &g) const;
    Grad zero_grad() const;

    /// Flat parameter view for the optimizer, in a fixed order.
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> p);
    static std::vector<double> flatten(const Grad &g);

    bool operator==(const DecodeHead &) const = default;

    Eigen::MatrixXd w1, wc, wd;
    Eigen::VectorXd b1, bc, bd; // stay zero when !bias
    bool bias = false;
};

/// Head file: "FSHD" | u32 version | u32 input | u32 hidden | u32 clip | u32 dino | u32 bias |
/// f64 params (w1, b1, wc, bc, wd, bd; matrices column-major).
std::vector<std::uint8_t> encode_head(const DecodeHead &head);
DecodeHead decode_head(std::span<const std::uint8_t> bytes);
void save_head(const DecodeHead &head, const std::filesystem::path &path);
DecodeHead load_head(const std::filesystem::path &path);

// ---------------------------------------------------------------------------------------------
// Losses; each returns the loss and writes dL/d(prediction).

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

/// Mean absolute error over all entries.
double l1_loss(std::span<const double> pred, std::span<const double> target, std::span<double> grad);

/// Mean SSIM of interleaved images (separable Gaussian window, zero padding); grad = dSSIM/dpred.
double ssim(const std::vector<double> &pred, const std::vector<double> &target, int width, int height, int channels,
            std::vector<double> *grad, const SsimOptions &opts = {});

/// Sum over columns of (1 - cos(pred_i, target_i)); a zero column contributes 1 and no gradient.
double cosine_loss(const Eigen::MatrixXd &pred, const Eigen::MatrixXd &target, Eigen::MatrixXd *grad);

double psnr(std::span<const double> pred, std::span<const double> target);

// ---------------------------------------------------------------------------------------------
// Optimizer

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
    std::vector<double> m, v;
    std::vector<std::int64_t> steps; // per element, so rows appended by densification restart cleanly

    void resize(std::size_t n);
    /// Keeps the moments of the listed source rows (width `row` each) in order, then appends zeroed rows.
    void remap(std::span<const std::size_t> keep, std::size_t appended, int row);
    void step(std::span<double> params, std::span<const double> grad, double lr);
};

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig {
    int iterations = 30000;
    int feature_iterations = 2500; // N_feat
    bool feature_learning = true;
    double lambda_dino = 0.1;
    double l1_weight = 1.0;
    double dssim_weight = 0.2;
    double feature_alpha_threshold = 0.5;
    int hidden = 64;
    bool head_bias = true;

    double lr_centroid = 1.6e-4;       // times scene extent
    double lr_centroid_final = 1.6e-6; // times scene extent, reached at `iterations`
    double lr_sh = 2.5e-3;
    double lr_opacity = 0.05;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_feature = 2.5e-3;
    double lr_mlp = 1e-3;

    int densify_from = 500;
    int densify_until = 15000;
    int densify_interval = 100;
    double densify_grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double split_factor = 1.6;
    double prune_opacity = 0.005;
    int opacity_reset_interval = 3000;
    std::size_t max_gaussians = 200000;

    std::uint64_t seed = 0;
    int threads = 1;
    int log_interval = 1;
    raster::RasterConfig raster;
};

/// Accumulated screen-space positional gradient norms (normalized-device units) per Gaussian.
struct DensifyStats {
    std::vector<double> grad_accum;
    std::vector<int> count;
    void resize(std::size_t n);
    void add(const raster::SceneGradients &g, int width, int height);
};

struct DensifyConfig {
    double grad_threshold = 2e-4;
    double extent = 1.0;
    double percent_dense = 0.01;
    double split_factor = 1.6;
    double prune_opacity = 0.005;
};

struct DensifyResult {
    GaussianScene scene;
    std::vector<std::size_t> source; // for every output Gaussian, the input Gaussian it came from
    std::size_t originals = 0; // leading outputs that are surviving unsplit inputs, in input order
    std::size_t cloned = 0, split = 0, pruned = 0;
};

/// Clones small and splits large Gaussians whose mean gradient exceeds the threshold, then
/// prunes by opacity. Features and SH are copied verbatim from the source.
DensifyResult densify_and_prune(const GaussianScene &scene, const DensifyStats &stats, const DensifyConfig &cfg,
                                std::mt19937_64 &rng);

struct IterationLog {
    int iteration = 0;
    int view = 0;
    double color_loss = 0.0;
    double psnr = 0.0;
    double clip_loss = 0.0; // mean per supervised pixel, 0 when inactive
    double dino_loss = 0.0;
    std::size_t gaussians = 0;
};

struct TrainResult {
    GaussianScene scene;
    DecodeHead head;
    std::vector<IterationLog> history;
    std::vector<std::size_t> source; // lineage: final Gaussian -> initial Gaussian
};

/// Reference maps for one view at image resolution: MAP-enhanced CLIP and upsampled DINO.
struct ViewTargets {
    FeatureMapD clip, dino;
    std::vector<double> rgb; // H*W*3 in [0,1]
};
ViewTargets prepare_targets(const DatasetView &view);

/// Camera-center radius of the dataset (times 1.1), the densification/learning-rate scale.
double camera_extent(const FeatureDataset &ds);

TrainResult train(const GaussianScene &initial, const FeatureDataset &dataset, const DecodeHead &initial_head,
                  const TrainConfig &cfg, const std::function<void(const IterationLog &)> &progress = {});
TrainResult train(const GaussianScene &initial, const FeatureDataset &dataset, const TrainConfig &cfg,
                  const std::function<void(const IterationLog &)> &progress = {});

/// Mean per-pixel CLIP cosine loss (alpha > threshold) over the listed views.
double feature_loss(const GaussianScene &scene, const DecodeHead &head, const FeatureDataset &dataset,
                    std::span<const int> views, const TrainConfig &cfg);

void write_loss_csv(const std::vector<IterationLog> &history, const std::filesystem::path &path);

} // namespace distill
} // namespace fsplat
