#include "fsplat/camera.hpp"

#include "fsplat/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace fsplat {

void Camera::validate() const {
    require(fx > 0.0 && fy > 0.0, ErrorCode::Contract, "camera focal lengths must be positive");
    require(width > 0 && height > 0, ErrorCode::Contract, "camera image size must be positive");
    require(world_to_camera.allFinite(), ErrorCode::Contract, "camera pose is not finite");
    const Mat3 r = rotation();
    require((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6 && std::abs(r.determinant() - 1.0) <= 1e-6,
            ErrorCode::Contract, "camera rotation is not orthonormal with det +1");
}

Camera Camera::look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double fx, double fy, int width,
                       int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) right = forward.unitOrthogonal();
    right.normalize();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    return cam;
}

nlohmann::json camera_to_json(const Camera &cam) {
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m[r * 4 + c] = cam.world_to_camera(r, c);
    return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
            {"width", cam.width}, {"height", cam.height}, {"world_to_camera", m}};
}

Camera camera_from_json(const nlohmann::json &j) {
    Camera cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        const auto m = j.at("world_to_camera").get<std::vector<double>>();
        require(m.size() == 16, ErrorCode::Format, "world_to_camera must have 16 entries");
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[r * 4 + c];
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorCode::Format, std::string("bad camera entry: ") + e.what());
    }
    cam.validate();
    return cam;
}

std::vector<Camera> load_cameras(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorCode::Format, path.string() + ": " + e.what());
    }
    std::vector<Camera> cams;
    const auto &views = j.contains("views") ? j.at("views") : j;
    for (const auto &v : views) cams.push_back(camera_from_json(v));
    return cams;
}

void save_cameras(const std::vector<Camera> &cams, const std::filesystem::path &path) {
    nlohmann::json j;
    j["views"] = nlohmann::json::array();
    for (const auto &c : cams) j["views"].push_back(camera_to_json(c));
    std::ofstream out(path);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

} // namespace fsplat
