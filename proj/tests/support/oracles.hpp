#pragma once

// Reference implementations used by the tests. They are written from the definitions, not
// from the library code, and favour obviousness over speed.

#include "fsplat/camera.hpp"
#include "fsplat/scene.hpp"
#include "fsplat/sh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using fsplat::Camera;
using fsplat::GaussianScene;
using fsplat::Mat2;
using fsplat::Mat3;
using fsplat::Vec2;
using fsplat::Vec3;

inline GaussianScene random_scene(std::uint64_t seed, int n, int sh_degree = 1, int feature_dim = 4,
                                  double spread = 0.8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianScene scene(sh_degree, feature_dim);
    for (int i = 0; i < n; ++i) {
        fsplat::Gaussian g;
        g.centroid = Vec3(u(rng), u(rng), u(rng)) * spread;
        for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(0.08 + 0.12 * (0.5 + 0.5 * u(rng)));
        g.rotation = fsplat::Quat(u(rng), u(rng), u(rng), u(rng));
        if (g.rotation.norm() < 0.1) g.rotation = fsplat::identity_quat();
        g.opacity_logit = 1.5 * u(rng);
        g.sh.resize(fsplat::sh_coeff_count(sh_degree));
        for (auto &c : g.sh) c = Vec3(u(rng), u(rng), u(rng)) * 0.4;
        g.sh[0] += Vec3(0.3, 0.3, 0.3);
        g.feature.resize(feature_dim);
        for (auto &f : g.feature) f = fsplat::Half(float(u(rng)));
        scene.push_back(g);
    }
    return scene;
}

inline Camera orbit_camera(double angle, int width, int height, double focal = 55.0, double distance = 4.0) {
    const Vec3 eye(distance * std::sin(angle), 0.3 * distance, -distance * std::cos(angle));
    return Camera::look_at(eye, Vec3::Zero(), Vec3(0, 1, 0), focal, focal, width, height);
}

/// Covariance from raw parameters via Eigen's quaternion, independent of fsplat::activate.
inline Mat3 covariance(const GaussianScene &s, std::size_t i) {
    const auto &q = s.rotations[i];
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    const Mat3 R = quat.normalized().toRotationMatrix();
    const Vec3 sc = s.log_scales[i].array().exp();
    return R * sc.cwiseAbs2().asDiagonal() * R.transpose();
}

struct Splat {
    std::size_t index;
    double depth;
    Vec2 mean;
    Mat2 inv_cov;
    double opacity;
    Vec3 color;
};

inline std::vector<Splat> splats(const GaussianScene &s, const Camera &cam, double near = 0.01) {
    std::vector<Splat> out;
    const Mat3 W = cam.world_to_camera.topLeftCorner<3, 3>();
    const Vec3 t = cam.world_to_camera.topRightCorner<3, 1>();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Vec3 p = W * s.centroids[i] + t;
        if (p.z() <= near) continue;
        const double opacity = 1.0 / (1.0 + std::exp(-s.opacity_logits[i]));
        if (opacity <= 0.0) continue;
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / p.z(), 0, -cam.fx * p.x() / (p.z() * p.z()), 0, cam.fy / p.z(), -cam.fy * p.y() / (p.z() * p.z());
        Mat2 cov = J * W * covariance(s, i) * W.transpose() * J.transpose() + 0.3 * Mat2::Identity();
        Splat sp;
        sp.index = i;
        sp.depth = p.z();
        sp.mean = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
        sp.inv_cov = cov.inverse();
        sp.opacity = opacity;
        const Vec3 dir = (s.centroids[i] - cam.center()).normalized();
        sp.color = fsplat::sh::evaluate(s.sh_of(i), dir, s.sh_degree()).cwiseMax(0.0);
        out.push_back(sp);
    }
    return out;
}

/// One composited (pixel, Gaussian) pair and the branch it took; used to tell whether a
/// finite-difference perturbation stayed on the same smooth piece.
struct Contribution {
    std::size_t index;
    bool alpha_clamped;
    bool operator==(const Contribution &) const = default;
};

struct Render {
    int width = 0, height = 0, dim = 0;
    std::vector<double> color, feature, alpha;
    std::vector<std::vector<Contribution>> contrib;
    std::vector<std::uint8_t> color_clamped; // per Gaussian, any channel below zero
};

/// Per-pixel sort-and-composite with the same sampling and cutoff conventions as the
/// rasterizer: 3-sigma support, alpha <= 0.99, stop before transmittance drops below 1e-4.
inline Render brute_force(const GaussianScene &s, const Camera &cam) {
    auto sp = splats(s, cam);
    std::stable_sort(sp.begin(), sp.end(), [](const Splat &a, const Splat &b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });
    Render r;
    r.width = cam.width;
    r.height = cam.height;
    r.dim = s.feature_dim();
    const std::size_t npix = std::size_t(r.width) * r.height;
    r.color.assign(npix * 3, 0.0);
    r.feature.assign(npix * r.dim, 0.0);
    r.alpha.assign(npix, 0.0);
    r.contrib.resize(npix);
    r.color_clamped.assign(s.size(), 0);
    for (const auto &g : sp) {
        const Vec3 dir = (s.centroids[g.index] - cam.center()).normalized();
        const Vec3 raw = fsplat::sh::evaluate(s.sh_of(g.index), dir, s.sh_degree());
        r.color_clamped[g.index] = (raw.array() < 0.0).any();
    }
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            const std::size_t pix = std::size_t(y) * r.width + x;
            double T = 1.0;
            for (const auto &g : sp) {
                const Vec2 d = Vec2(x, y) - g.mean;
                const double m = d.dot(g.inv_cov * d);
                if (m > 9.0) continue;
                const double raw = g.opacity * std::exp(-0.5 * m);
                const double a = std::min(0.99, raw);
                if (T * (1.0 - a) < 1e-4) break;
                for (int c = 0; c < 3; ++c) r.color[3 * pix + c] += a * T * g.color[c];
                for (int j = 0; j < r.dim; ++j)
                    r.feature[pix * r.dim + j] += a * T * double(float(s.features[g.index * r.dim + j]));
                r.contrib[pix].push_back({g.index, raw >= 0.99});
                T *= 1.0 - a;
            }
            r.alpha[pix] = 1.0 - T;
        }
    }
    return r;
}

/// Brute-force k nearest neighbours ordered by (squared distance, index).
inline std::vector<std::size_t> brute_knn(const std::vector<Vec3> &pts, const Vec3 &q, std::size_t k) {
    std::vector<std::size_t> idx(pts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = (pts[a] - q).squaredNorm(), db = (pts[b] - q).squaredNorm();
        return da < db || (da == db && a < b);
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

/// Rotation factor of the polar decomposition by Newton iteration X <- (X + X^-T)/2.
inline Mat3 polar_rotation(const Mat3 &F) {
    Mat3 X = F;
    for (int it = 0; it < 100; ++it) {
        const Mat3 next = 0.5 * (X + X.inverse().transpose());
        if ((next - X).norm() < 1e-15) return next;
        X = next;
    }
    return X;
}

inline Mat3 axis_rotation(const Vec3 &axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

} // namespace oracle
