#pragma once

#include "fsplat/camera.hpp"
#include "fsplat/image.hpp"
#include "fsplat/rasterizer.hpp"
#include "fsplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsplat::edit {

using Indices = std::span<const std::size_t>;

/// Throws Error(Contract) unless `sel` is strictly ascending and inside the scene.
void check_selection(const GaussianScene &scene, Indices sel);

/// Mean centroid of the selection (origin when empty).
Vec3 selection_center(const GaussianScene &scene, Indices sel);

GaussianScene remove(const GaussianScene &scene, Indices sel);
GaussianScene translate(const GaussianScene &scene, Indices sel, const Vec3 &b);
/// Rotates centroids about `pivot` (default: selection center) and left-composes quat(r) onto
/// each rotation. Throws Error(Contract) unless r is a proper rotation within 1e-6.
GaussianScene rotate(const GaussianScene &scene, Indices sel, const Mat3 &r, std::optional<Vec3> pivot = {});
/// Scales about `pivot`. Isotropic factors add ln(s) to log-scales; anisotropic factors apply
/// in the selection's principal frame (eigenvectors of the centroid scatter, or `frame` when
/// given) and re-factor each covariance.
GaussianScene scale(const GaussianScene &scene, Indices sel, const Vec3 &s, std::optional<Vec3> pivot = {},
                    std::optional<Mat3> frame = {});
/// Appends copies of the selection shifted by `offset`.
GaussianScene clone(const GaussianScene &scene, Indices sel, const Vec3 &offset);

/// Principal axes of the selected centroids as columns (ascending variance), det +1.
Mat3 principal_frame(const GaussianScene &scene, Indices sel);

// ---------------------------------------------------------------------------------------------
// Edit scripts

struct EditOp {
    enum class Kind { Remove, Translate, Rotate, Scale, Clone };
    Kind kind = Kind::Translate;
    Vec3 vector = Vec3::Zero();        // translate: b, scale: factors, clone: offset
    Mat3 matrix = Mat3::Identity();    // rotate
    std::optional<Vec3> pivot;         // rotate, scale
    bool select_clones = false;        // clone: later ops act on the new copies
};

/// Ordered primitives applied to one working selection. Removing empties the selection;
/// cloning keeps it on the originals unless `select_clones`.
struct EditScript {
    std::vector<EditOp> ops;
};

/// Accepts {"ops": [...]} or a bare array. Ops:
///   {"op": "remove"}
///   {"op": "translate", "by": [x,y,z]}
///   {"op": "rotate", "axis": [x,y,z], "degrees": a} or {"op": "rotate", "matrix": [[...],[...],[...]]}
///   {"op": "scale", "factor": s | [sx,sy,sz]}
///   {"op": "clone", "offset": [x,y,z], "select_clones": bool}
/// rotate and scale take an optional "pivot". Throws Error(BadRequest) on malformed input.
EditScript parse_script(const nlohmann::json &j);
/// Canonical form: every field explicit, rotations as matrices.
nlohmann::json to_json(const EditScript &script);

struct ScriptResult {
    GaussianScene scene;
    std::vector<std::size_t> selection; // final working selection
};
ScriptResult apply_script(const GaussianScene &scene, std::vector<std::size_t> selection, const EditScript &script);

Mat3 axis_angle(const Vec3 &axis, double degrees);

// ---------------------------------------------------------------------------------------------
// Appearance optimization

struct LossResult {
    double loss = 0.0;
    std::vector<double> gradient; // dL/dpixel, H*W*3
};

/// Maps a rendered image to a loss and its per-pixel gradient.
class LossProvider {
public:
    virtual ~LossProvider() = default;
    virtual LossResult evaluate(const ImageF &image, int view) = 0;
};

/// Squared error to a fixed colour, averaged over a per-view pixel mask.
class TargetColorProvider : public LossProvider {
public:
    TargetColorProvider(Vec3 target, std::vector<std::vector<std::uint8_t>> masks);
    LossResult evaluate(const ImageF &image, int view) override;

private:
    Vec3 target_;
    std::vector<std::vector<std::uint8_t>> masks_;
};

/// Runs an external program and exchanges frames over its stdin/stdout.
///   request:  "FSLQ" u32 view | u32 width | u32 height | f32 rgb[H*W*3]
///   response: "FSLR" f64 loss | u32 width | u32 height | f32 grad[H*W*3]
/// The process stays alive across calls; any failure raises Error(Provider).
class SubprocessProvider : public LossProvider {
public:
    explicit SubprocessProvider(std::vector<std::string> argv);
    ~SubprocessProvider() override;
    SubprocessProvider(const SubprocessProvider &) = delete;
    SubprocessProvider &operator=(const SubprocessProvider &) = delete;
    LossResult evaluate(const ImageF &image, int view) override;

private:
    void shutdown();
    std::vector<std::string> argv_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
};

/// Pixels where the selected Gaussians carry more than `threshold` of the composited weight.
std::vector<std::uint8_t> selection_mask(const GaussianScene &scene, Indices sel, const Camera &cam,
                                         double threshold = 0.5);

struct AppearanceConfig {
    int iterations = 2500;
    double lr = 2.5e-3;
    raster::RasterConfig raster;
};

/// Optimizes the SH coefficients of the selection only, cycling through `views`. The input is
/// never modified; a provider error propagates and no result is produced.
GaussianScene optimize_appearance(const GaussianScene &scene, Indices sel, LossProvider &provider,
                                  const std::vector<Camera> &views, const AppearanceConfig &cfg = {});

} // namespace fsplat::edit
