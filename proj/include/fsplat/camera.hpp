#pragma once

#include "fsplat/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <vector>

namespace fsplat {

/// Pinhole camera. Pixel (x, y) samples the image plane at (x, y) in pixel units.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Mat4 world_to_camera = Mat4::Identity(); // rigid, row-major when serialized

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }

    /// Throws Error(Contract) if intrinsics are non-positive or the rotation block is not
    /// orthonormal with det +1 (tolerance 1e-6).
    void validate() const;

    /// Camera at `eye` looking at `target`; +y of the image points along -up.
    static Camera look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double fx, double fy, int width,
                          int height);
};

nlohmann::json camera_to_json(const Camera &cam);
Camera camera_from_json(const nlohmann::json &j);

/// cameras.json: {"views": [camera...], "holdout": [indices]}.
std::vector<Camera> load_cameras(const std::filesystem::path &path);
void save_cameras(const std::vector<Camera> &cams, const std::filesystem::path &path);

} // namespace fsplat
