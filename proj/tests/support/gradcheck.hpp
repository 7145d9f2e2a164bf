#pragma once

// Central finite-difference check of rasterize_backward against a random linear loss.

#include "oracles.hpp"

#include "fsplat/rasterizer.hpp"

#include <functional>
#include <string>

namespace oracle {

struct GradCheckResult {
    int checked = 0;
    int skipped = 0;  // perturbation changed which (pixel, Gaussian) pairs composite
    int failed = 0;
    double worst_rel = 0.0;
    std::string worst_name;
};

struct LinearLoss {
    std::vector<double> wc, wf;
    double operator()(const fsplat::raster::RenderTarget &t) const {
        double l = 0.0;
        for (std::size_t i = 0; i < wc.size(); ++i) l += wc[i] * t.color[i];
        for (std::size_t i = 0; i < wf.size(); ++i) l += wf[i] * t.feature[i];
        return l;
    }
};

inline LinearLoss random_loss(std::uint64_t seed, int width, int height, int dim) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    LinearLoss L;
    L.wc.resize(std::size_t(width) * height * 3);
    L.wf.resize(std::size_t(width) * height * dim);
    for (auto &w : L.wc) w = u(rng);
    for (auto &w : L.wf) w = u(rng);
    return L;
}

inline GradCheckResult gradient_check(std::uint64_t seed, int n = 12, int size = 32, double h = 1e-3,
                                      double tol = 1e-3) {
    using namespace fsplat;
    GaussianScene scene = random_scene(seed, n, 1, 3, 0.6);
    const Camera cam = orbit_camera(0.3 * double(seed % 7), size, size, 0.9 * size);
    const LinearLoss loss = random_loss(seed, size, size, scene.feature_dim());
    raster::RasterConfig cfg;
    const auto base = raster::rasterize(scene, cam, cfg);
    const auto grads = raster::rasterize_backward(scene, cam, base, loss.wc, loss.wf, cfg);
    const Render ref = brute_force(scene, cam);

    GradCheckResult res;
    auto check = [&](const std::string &name, double analytic, const std::function<double &(GaussianScene &)> &param) {
        // Five-point central stencil at step h; every evaluation must stay on the same
        // smooth piece as the base render.
        double value[4];
        const double offsets[4] = {-2 * h, -h, h, 2 * h};
        for (int k = 0; k < 4; ++k) {
            GaussianScene moved = scene;
            param(moved) += offsets[k];
            const Render r = brute_force(moved, cam);
            if (r.contrib != ref.contrib || r.color_clamped != ref.color_clamped) {
                ++res.skipped;
                return;
            }
            value[k] = loss(raster::rasterize(moved, cam, cfg));
        }
        const double numeric = (8.0 * (value[2] - value[1]) - (value[3] - value[0])) / (12.0 * h);
        const double mag = std::max(std::abs(analytic), std::abs(numeric));
        if (mag <= 1e-6) return;
        ++res.checked;
        const double rel = std::abs(analytic - numeric) / mag;
        if (rel > res.worst_rel) {
            res.worst_rel = rel;
            res.worst_name = name + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
        }
        if (rel > tol) ++res.failed;
    };

    const int K = scene.sh_count();
    const int D = scene.feature_dim();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const std::string g = "g" + std::to_string(i);
        for (int k = 0; k < 3; ++k) {
            check(g + ".centroid" + std::to_string(k), grads.centroid[i][k],
                  [i, k](GaussianScene &s) -> double & { return s.centroids[i][k]; });
            check(g + ".log_scale" + std::to_string(k), grads.log_scale[i][k],
                  [i, k](GaussianScene &s) -> double & { return s.log_scales[i][k]; });
        }
        for (int k = 0; k < 4; ++k)
            check(g + ".rotation" + std::to_string(k), grads.rotation[i][k],
                  [i, k](GaussianScene &s) -> double & { return s.rotations[i][k]; });
        check(g + ".opacity", grads.opacity_logit[i], [i](GaussianScene &s) -> double & { return s.opacity_logits[i]; });
        for (int k = 0; k < K * 3; ++k)
            check(g + ".sh" + std::to_string(k), grads.sh[i * K * 3 + k],
                  [i, k, K](GaussianScene &s) -> double & { return s.sh[i * K * 3 + k]; });
        // The loss is linear in each feature, so a difference quotient over the actual
        // half-precision step is exact up to rounding of the loss.
        for (int j = 0; j < D; ++j) {
            GaussianScene plus = scene, minus = scene;
            const float f = float(scene.features[i * D + j]);
            plus.features[i * D + j] = Half(f + 0.25f);
            minus.features[i * D + j] = Half(f - 0.25f);
            const double step = double(float(plus.features[i * D + j])) - double(float(minus.features[i * D + j]));
            const double numeric = (loss(raster::rasterize(plus, cam, cfg)) - loss(raster::rasterize(minus, cam, cfg))) / step;
            const double analytic = grads.feature[i * D + j];
            const double mag = std::max(std::abs(analytic), std::abs(numeric));
            if (mag <= 1e-6) continue;
            ++res.checked;
            const double rel = std::abs(analytic - numeric) / mag;
            if (rel > res.worst_rel) {
                res.worst_rel = rel;
                res.worst_name = g + ".feature" + std::to_string(j);
            }
            if (rel > tol) ++res.failed;
        }
    }
    return res;
}

} // namespace oracle
