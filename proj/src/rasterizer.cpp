#include "fsplat/rasterizer.hpp"

#include "fsplat/error.hpp"
#include "fsplat/parallel.hpp"
#include "fsplat/sh.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsplat::raster {

namespace {

inline double feature_value(Half h) { return static_cast<double>(static_cast<float>(h)); }
inline double feature_value(float f) { return static_cast<double>(f); }

int effective_feature_dim(const GaussianScene &scene, const RasterConfig &cfg) {
    if (!cfg.render_features) return 0;
    require(scene.feature_dim() <= cfg.max_feature_dim, ErrorCode::Contract,
            "feature_dim " + std::to_string(scene.feature_dim()) + " exceeds the configured maximum");
    return scene.feature_dim();
}

/// Loads the features of one tile's splats into a dense double block (entry-major).
template <typename F>
void load_tile_features(std::span<const F> features, int scene_dim, int dim, const RenderTarget &t,
                        std::uint32_t begin, std::uint32_t end, std::vector<double> &out) {
    out.resize(std::size_t(end - begin) * dim);
    for (auto e = begin; e < end; ++e) {
        const auto g = t.projected[t.tile_entries[e]].index;
        const F *src = features.data() + std::size_t(g) * scene_dim;
        double *dst = out.data() + std::size_t(e - begin) * dim;
        for (int j = 0; j < dim; ++j) dst[j] = feature_value(src[j]);
    }
}

void bin_tiles(RenderTarget &t, const RasterConfig &cfg) {
    const int ts = cfg.tile_size;
    t.tiles_x = (t.width + ts - 1) / ts;
    t.tiles_y = (t.height + ts - 1) / ts;
    const int tiles = t.tiles_x * t.tiles_y;

    std::stable_sort(t.projected.begin(), t.projected.end(), [](const ProjectedGaussian &a, const ProjectedGaussian &b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });

    auto tile_range = [&](const ProjectedGaussian &p) {
        const int x0 = std::clamp(int(std::floor((p.mean2d.x() - p.radius) / ts)), 0, t.tiles_x - 1);
        const int x1 = std::clamp(int(std::floor((p.mean2d.x() + p.radius) / ts)), 0, t.tiles_x - 1);
        const int y0 = std::clamp(int(std::floor((p.mean2d.y() - p.radius) / ts)), 0, t.tiles_y - 1);
        const int y1 = std::clamp(int(std::floor((p.mean2d.y() + p.radius) / ts)), 0, t.tiles_y - 1);
        return std::array<int, 4>{x0, x1, y0, y1};
    };

    std::vector<std::uint32_t> counts(tiles + 1, 0);
    for (const auto &p : t.projected) {
        const auto r = tile_range(p);
        for (int ty = r[2]; ty <= r[3]; ++ty)
            for (int tx = r[0]; tx <= r[1]; ++tx) ++counts[ty * t.tiles_x + tx];
    }
    t.tile_offsets.assign(tiles + 1, 0);
    for (int i = 0; i < tiles; ++i) t.tile_offsets[i + 1] = t.tile_offsets[i] + counts[i];
    t.tile_entries.resize(t.tile_offsets[tiles]);
    std::vector<std::uint32_t> cursor(t.tile_offsets.begin(), t.tile_offsets.end() - 1);
    for (std::uint32_t i = 0; i < t.projected.size(); ++i) {
        const auto r = tile_range(t.projected[i]);
        for (int ty = r[2]; ty <= r[3]; ++ty)
            for (int tx = r[0]; tx <= r[1]; ++tx) t.tile_entries[cursor[ty * t.tiles_x + tx]++] = i;
    }
}

template <typename F>
RenderTarget forward(const GaussianScene &scene, std::span<const F> features, const Camera &cam,
                     const RasterConfig &cfg) {
    cam.validate();
    const int dim = effective_feature_dim(scene, cfg);
    RenderTarget t;
    t.width = cam.width;
    t.height = cam.height;
    t.feature_dim = dim;
    const std::size_t npix = std::size_t(t.width) * t.height;
    t.color.assign(npix * 3, 0.0);
    t.feature.assign(npix * dim, 0.0);
    t.alpha.assign(npix, 0.0);
    t.depth.assign(npix, 0.0);
    t.transmittance.assign(npix, 1.0);
    t.contributors.assign(npix, 0);
    t.projected = project(scene, cam, cfg);
    bin_tiles(t, cfg);

    const int ts = cfg.tile_size;
    const double support2 = cfg.support_sigma * cfg.support_sigma;
    const int tiles = t.tiles_x * t.tiles_y;
    parallel_chunks(tiles, resolve_threads(cfg.threads), [&](int tile_begin, int tile_end, int) {
        std::vector<double> tile_feat;
        for (int tile = tile_begin; tile < tile_end; ++tile) {
            const auto begin = t.tile_offsets[tile], end = t.tile_offsets[tile + 1];
            if (dim > 0) load_tile_features(features, scene.feature_dim(), dim, t, begin, end, tile_feat);
            const int px0 = (tile % t.tiles_x) * ts, py0 = (tile / t.tiles_x) * ts;
            const int px1 = std::min(px0 + ts, t.width), py1 = std::min(py0 + ts, t.height);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const std::size_t pix = t.pixel(px, py);
                    double T = 1.0;
                    double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0;
                    double *fout = t.feature.data() + pix * dim;
                    std::uint32_t consumed = 0;
                    for (auto e = begin; e < end; ++e) {
                        const ProjectedGaussian &g = t.projected[t.tile_entries[e]];
                        const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
                        const double m = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
                        if (m > support2) continue;
                        const double alpha = std::min(cfg.max_alpha, g.opacity * std::exp(-0.5 * m));
                        const double next_T = T * (1.0 - alpha);
                        if (next_T < cfg.min_transmittance) break;
                        const double w = alpha * T;
                        c0 += w * g.color[0];
                        c1 += w * g.color[1];
                        c2 += w * g.color[2];
                        d += w * g.depth;
                        if (dim > 0) {
                            const double *f = tile_feat.data() + std::size_t(e - begin) * dim;
                            for (int j = 0; j < dim; ++j) fout[j] += w * f[j];
                        }
                        T = next_T;
                        consumed = e - begin + 1;
                    }
                    t.color[3 * pix] = c0;
                    t.color[3 * pix + 1] = c1;
                    t.color[3 * pix + 2] = c2;
                    t.depth[pix] = d;
                    t.alpha[pix] = 1.0 - T;
                    t.transmittance[pix] = T;
                    t.contributors[pix] = consumed;
                }
            }
        }
    });
    return t;
}

/// Screen-space gradients per projected splat.
struct ScreenGrads {
    int dim = 0;
    std::vector<Vec2> mean2d;
    std::vector<Vec3> conic; // dL/da, dL/db (off-diagonal value), dL/dc
    std::vector<double> opacity;
    std::vector<Vec3> color;
    std::vector<double> feature;

    void reset(std::size_t n, int d) {
        dim = d;
        mean2d.assign(n, Vec2::Zero());
        conic.assign(n, Vec3::Zero());
        opacity.assign(n, 0.0);
        color.assign(n, Vec3::Zero());
        feature.assign(n * d, 0.0);
    }
    void add(std::size_t dst, const ScreenGrads &src, std::size_t s) {
        mean2d[dst] += src.mean2d[s];
        conic[dst] += src.conic[s];
        opacity[dst] += src.opacity[s];
        color[dst] += src.color[s];
        for (int j = 0; j < dim; ++j) feature[dst * dim + j] += src.feature[s * dim + j];
    }
    void merge(const ScreenGrads &other) {
        for (std::size_t i = 0; i < mean2d.size(); ++i) add(i, other, i);
    }
};

template <typename F>
void backward_tiles(std::span<const F> features, int scene_dim, const RenderTarget &t, const RasterConfig &cfg,
                    const BackwardOptions &opts, std::span<const double> dC, std::span<const double> dF,
                    int tile_begin, int tile_end, ScreenGrads &out) {
    const int dim = t.feature_dim;
    const bool feature_alpha = opts.feature_to_geometry && dim > 0;
    const int ts = cfg.tile_size;
    const double support2 = cfg.support_sigma * cfg.support_sigma;
    std::vector<double> tile_feat;
    std::vector<double> accum_f(dim);
    ScreenGrads staging;

    for (int tile = tile_begin; tile < tile_end; ++tile) {
        const auto begin = t.tile_offsets[tile], end = t.tile_offsets[tile + 1];
        if (begin == end) continue;
        if (feature_alpha) load_tile_features(features, scene_dim, dim, t, begin, end, tile_feat);
        // Either the tile-local staging block (indexed by entry) or the global block (indexed by splat).
        ScreenGrads *sink = &out;
        if (cfg.tile_gradient_buffer) {
            staging.reset(end - begin, dim);
            sink = &staging;
        }
        auto slot = [&](std::uint32_t e) -> std::size_t {
            return cfg.tile_gradient_buffer ? std::size_t(e - begin) : std::size_t(t.tile_entries[e]);
        };

        const int px0 = (tile % t.tiles_x) * ts, py0 = (tile / t.tiles_x) * ts;
        const int px1 = std::min(px0 + ts, t.width), py1 = std::min(py0 + ts, t.height);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const std::size_t pix = t.pixel(px, py);
                const std::uint32_t consumed = t.contributors[pix];
                if (consumed == 0) continue;
                const Vec3 dLdC(dC[3 * pix], dC[3 * pix + 1], dC[3 * pix + 2]);
                const double *dLdF = dim > 0 ? dF.data() + pix * dim : nullptr;
                double T = t.transmittance[pix];
                Vec3 accum_c = Vec3::Zero();
                if (feature_alpha) std::fill(accum_f.begin(), accum_f.end(), 0.0);

                for (auto e = begin + consumed; e-- > begin;) {
                    const ProjectedGaussian &g = t.projected[t.tile_entries[e]];
                    const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
                    const double m = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
                    if (m > support2) continue;
                    const double G = std::exp(-0.5 * m);
                    const double raw_alpha = g.opacity * G;
                    const double alpha = std::min(cfg.max_alpha, raw_alpha);
                    T /= (1.0 - alpha);
                    const double w = alpha * T;
                    const std::size_t s = slot(e);

                    sink->color[s] += w * dLdC;
                    double dL_dalpha = T * (g.color - accum_c).dot(dLdC);
                    accum_c = alpha * g.color + (1.0 - alpha) * accum_c;
                    if (dim > 0) {
                        double *gf = sink->feature.data() + s * dim;
                        for (int j = 0; j < dim; ++j) gf[j] += w * dLdF[j];
                        if (feature_alpha) {
                            const double *f = tile_feat.data() + std::size_t(e - begin) * dim;
                            double acc = 0.0;
                            for (int j = 0; j < dim; ++j) {
                                acc += (f[j] - accum_f[j]) * dLdF[j];
                                accum_f[j] = alpha * f[j] + (1.0 - alpha) * accum_f[j];
                            }
                            dL_dalpha += T * acc;
                        }
                    }
                    if (raw_alpha >= cfg.max_alpha) continue; // clamped: flat in opacity and position
                    sink->opacity[s] += G * dL_dalpha;
                    const double dL_dm = dL_dalpha * raw_alpha * -0.5;
                    sink->mean2d[s] += dL_dm * Vec2(-(2.0 * g.conic[0] * dx + 2.0 * g.conic[1] * dy),
                                                    -(2.0 * g.conic[1] * dx + 2.0 * g.conic[2] * dy));
                    sink->conic[s] += dL_dm * Vec3(dx * dx, 2.0 * dx * dy, dy * dy);
                }
            }
        }
        if (cfg.tile_gradient_buffer)
            for (auto e = begin; e < end; ++e) out.add(t.tile_entries[e], staging, e - begin);
    }
}

/// Chain rule from screen-space quantities back to the 3D parameters of one Gaussian.
void geometry_backward(const GaussianScene &scene, const Camera &cam, const RasterConfig &cfg,
                       const ProjectedGaussian &p, const ScreenGrads &sg, std::size_t k, SceneGradients &out) {
    const std::size_t i = p.index;
    const int degree = scene.sh_degree();
    const int K = scene.sh_count();
    const Mat3 Rw = cam.rotation();
    const Activation act = activate(scene.log_scales[i], scene.rotations[i], scene.opacity_logits[i]);
    const double x = p.cam_point.x(), y = p.cam_point.y(), z = p.cam_point.z();
    const double fx = cam.fx, fy = cam.fy;

    out.visible[i] = 1;
    out.mean2d[i] += sg.mean2d[k];

    // opacity
    out.opacity_logit[i] += sg.opacity[k] * act.opacity * (1.0 - act.opacity);

    // SH color
    Vec3 dcolor = sg.color[k];
    for (int c = 0; c < 3; ++c)
        if (p.color_clamped[c]) dcolor[c] = 0.0;
    const auto b = sh::basis(p.view_dir, degree);
    const auto db = sh::basis_gradient(p.view_dir, degree);
    const auto coeffs = scene.sh_of(i);
    Vec3 dL_ddir = Vec3::Zero();
    double *gsh = out.sh.data() + i * K * 3;
    for (int kk = 0; kk < K; ++kk) {
        for (int c = 0; c < 3; ++c) gsh[3 * kk + c] += b[kk] * dcolor[c];
        const double s = dcolor.dot(Vec3(coeffs[3 * kk], coeffs[3 * kk + 1], coeffs[3 * kk + 2]));
        dL_ddir += s * db[kk];
    }
    Vec3 dX = (dL_ddir - p.view_dir * p.view_dir.dot(dL_ddir)) / p.view_dist;

    // conic -> 2D covariance: dL/dSigma' = -Q Gq Q
    const Vec3 &gc = sg.conic[k];
    Mat2 Gq;
    Gq << gc[0], 0.5 * gc[1], 0.5 * gc[1], gc[2];
    Mat2 Q;
    Q << p.conic[0], p.conic[1], p.conic[1], p.conic[2];
    const Mat2 Gcov2 = -Q * Gq * Q;

    // Sigma' = T Sigma T^T + dilation, T = J Rw
    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);
    const Eigen::Matrix<double, 2, 3> Tm = J * Rw;
    const Mat3 Gsigma = Tm.transpose() * Gcov2 * Tm;
    const Eigen::Matrix<double, 2, 3> GT = 2.0 * Gcov2 * Tm * act.covariance;
    const Eigen::Matrix<double, 2, 3> GJ = GT * Rw.transpose();

    Vec3 dcam = Vec3::Zero();
    const Vec2 &dm = sg.mean2d[k];
    dcam.x() += dm.x() * fx / z;
    dcam.y() += dm.y() * fy / z;
    dcam.z() += -(dm.x() * fx * x + dm.y() * fy * y) / (z * z);
    dcam.x() += GJ(0, 2) * (-fx / (z * z));
    dcam.y() += GJ(1, 2) * (-fy / (z * z));
    dcam.z() += GJ(0, 0) * (-fx / (z * z)) + GJ(0, 2) * (2.0 * fx * x / (z * z * z)) + GJ(1, 1) * (-fy / (z * z)) +
                GJ(1, 2) * (2.0 * fy * y / (z * z * z));
    dX += Rw.transpose() * dcam;
    out.centroid[i] += dX;

    // Sigma = M M^T, M = R S
    const Mat3 M = act.rotation * act.scale.asDiagonal();
    const Mat3 GM = 2.0 * Gsigma * M;
    Vec3 ds;
    for (int c = 0; c < 3; ++c) ds[c] = GM.col(c).dot(act.rotation.col(c));
    out.log_scale[i] += ds.cwiseProduct(act.scale);
    Mat3 GR = GM * act.scale.asDiagonal();

    const double qn = scene.rotations[i].norm();
    if (qn > 0.0 && std::isfinite(qn)) {
        const Quat q = scene.rotations[i] / qn;
        const double w = q[0], qx = q[1], qy = q[2], qz = q[3];
        Quat dq;
        dq[0] = 2.0 * (-qz * GR(0, 1) + qy * GR(0, 2) + qz * GR(1, 0) - qx * GR(1, 2) - qy * GR(2, 0) + qx * GR(2, 1));
        dq[1] = 2.0 * (qy * GR(0, 1) + qz * GR(0, 2) + qy * GR(1, 0) - 2.0 * qx * GR(1, 1) - w * GR(1, 2) +
                       qz * GR(2, 0) + w * GR(2, 1) - 2.0 * qx * GR(2, 2));
        dq[2] = 2.0 * (-2.0 * qy * GR(0, 0) + qx * GR(0, 1) + w * GR(0, 2) + qx * GR(1, 0) + qz * GR(1, 2) -
                       w * GR(2, 0) + qz * GR(2, 1) - 2.0 * qy * GR(2, 2));
        dq[3] = 2.0 * (-2.0 * qz * GR(0, 0) - w * GR(0, 1) + qx * GR(0, 2) + w * GR(1, 0) - 2.0 * qz * GR(1, 1) +
                       qy * GR(1, 2) + qx * GR(2, 0) + qy * GR(2, 1));
        out.rotation[i] += (dq - q * q.dot(dq)) / qn;
    }

    // features
    const int dim = sg.dim;
    for (int j = 0; j < dim; ++j) out.feature[i * scene.feature_dim() + j] += sg.feature[k * dim + j];
    (void)cfg;
}

template <typename F>
SceneGradients backward(const GaussianScene &scene, std::span<const F> features, const Camera &cam,
                        const RenderTarget &t, std::span<const double> dC, std::span<const double> dF,
                        const RasterConfig &cfg, const BackwardOptions &opts) {
    const std::size_t npix = std::size_t(t.width) * t.height;
    require(t.width == cam.width && t.height == cam.height, ErrorCode::Contract, "render target does not match camera");
    require(dC.size() == npix * 3, ErrorCode::Contract, "dL/dC has the wrong shape");
    require(t.feature_dim == 0 || dF.empty() || dF.size() == npix * t.feature_dim, ErrorCode::Contract,
            "dL/dF has the wrong shape");
    require(t.feature_dim == 0 || t.feature_dim == scene.feature_dim(), ErrorCode::Contract,
            "render target feature_dim does not match scene");
    for (const auto &p : t.projected)
        require(p.index < scene.size(), ErrorCode::Contract, "render target does not match scene");

    std::vector<double> zeros;
    if (t.feature_dim > 0 && dF.empty()) {
        zeros.assign(npix * t.feature_dim, 0.0);
        dF = zeros;
    }

    ScreenGrads screen;
    screen.reset(t.projected.size(), t.feature_dim);
    const int tiles = t.tiles_x * t.tiles_y;
    // Direct global accumulation is only race-free on one worker.
    const int workers = cfg.tile_gradient_buffer ? resolve_threads(cfg.threads) : 1;
    if (workers <= 1) {
        backward_tiles(features, scene.feature_dim(), t, cfg, opts, dC, dF, 0, tiles, screen);
    } else {
        std::vector<ScreenGrads> partial(workers);
        parallel_chunks(tiles, workers, [&](int b, int e, int w) {
            partial[w].reset(t.projected.size(), t.feature_dim);
            backward_tiles(features, scene.feature_dim(), t, cfg, opts, dC, dF, b, e, partial[w]);
        });
        for (const auto &p : partial)
            if (!p.mean2d.empty()) screen.merge(p);
    }

    SceneGradients out;
    out.resize(scene.size(), scene.sh_count(), scene.feature_dim());
    for (std::size_t k = 0; k < t.projected.size(); ++k) geometry_backward(scene, cam, cfg, t.projected[k], screen, k, out);
    return out;
}

} // namespace

std::vector<ProjectedGaussian> project(const GaussianScene &scene, const Camera &cam, const RasterConfig &cfg) {
    const Mat3 Rw = cam.rotation();
    const Vec3 tw = cam.translation();
    const Vec3 cam_center = cam.center();
    const int degree = scene.sh_degree();
    std::vector<ProjectedGaussian> out;
    out.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 pc = Rw * scene.centroids[i] + tw;
        const double z = pc.z();
        if (!(z > cfg.near_plane)) continue;
        const Activation act = activate(scene.log_scales[i], scene.rotations[i], scene.opacity_logits[i]);
        if (!(act.opacity > 0.0)) continue;

        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0.0, -cam.fx * pc.x() / (z * z), 0.0, cam.fy / z, -cam.fy * pc.y() / (z * z);
        const Eigen::Matrix<double, 2, 3> Tm = J * Rw;
        Mat2 cov = Tm * act.covariance * Tm.transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov(0, 0) += cfg.dilation;
        cov(1, 1) += cfg.dilation;
        const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
        if (!(det > 0.0)) continue;

        ProjectedGaussian p;
        p.index = static_cast<std::uint32_t>(i);
        p.cam_point = pc;
        p.depth = z;
        p.mean2d = Vec2(cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy);
        p.cov2d = cov;
        p.conic = Vec3(cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det);
        const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
        p.radius = cfg.support_sigma * std::sqrt(lambda_max);
        if (p.mean2d.x() + p.radius < 0.0 || p.mean2d.x() - p.radius > cam.width - 1 || p.mean2d.y() + p.radius < 0.0 ||
            p.mean2d.y() - p.radius > cam.height - 1)
            continue;
        p.opacity = act.opacity;

        const Vec3 ray = scene.centroids[i] - cam_center;
        p.view_dist = ray.norm();
        p.view_dir = p.view_dist > 0.0 ? Vec3(ray / p.view_dist) : Vec3::UnitZ();
        const Vec3 rgb = sh::evaluate(scene.sh_of(i), p.view_dir, degree);
        for (int c = 0; c < 3; ++c) {
            p.color_clamped[c] = rgb[c] < 0.0;
            p.color[c] = std::max(rgb[c], 0.0);
        }
        out.push_back(p);
    }
    return out;
}

std::vector<ProjectedGaussian> project(const GaussianScene &scene, const Camera &cam, double near_plane) {
    RasterConfig cfg;
    cfg.near_plane = near_plane;
    return project(scene, cam, cfg);
}

ImageF RenderTarget::color_image() const {
    ImageF img(width, height, 3);
    img.data = color;
    return img;
}

RenderTarget rasterize(const GaussianScene &scene, const Camera &cam, const RasterConfig &cfg) {
    return forward<Half>(scene, scene.features, cam, cfg);
}

RenderTarget rasterize(const GaussianScene &scene, std::span<const float> features, const Camera &cam,
                       const RasterConfig &cfg) {
    require(features.size() == scene.size() * scene.feature_dim(), ErrorCode::Contract, "feature copy has wrong size");
    return forward<float>(scene, features, cam, cfg);
}

void SceneGradients::resize(std::size_t n, int sh_count, int feature_dim) {
    centroid.assign(n, Vec3::Zero());
    log_scale.assign(n, Vec3::Zero());
    rotation.assign(n, Quat::Zero());
    opacity_logit.assign(n, 0.0);
    sh.assign(n * sh_count * 3, 0.0);
    feature.assign(n * feature_dim, 0.0);
    mean2d.assign(n, Vec2::Zero());
    visible.assign(n, 0);
}

SceneGradients rasterize_backward(const GaussianScene &scene, const Camera &cam, const RenderTarget &target,
                                  std::span<const double> dL_dcolor, std::span<const double> dL_dfeature,
                                  const RasterConfig &cfg, const BackwardOptions &opts) {
    return backward<Half>(scene, scene.features, cam, target, dL_dcolor, dL_dfeature, cfg, opts);
}

SceneGradients rasterize_backward(const GaussianScene &scene, std::span<const float> features, const Camera &cam,
                                  const RenderTarget &target, std::span<const double> dL_dcolor,
                                  std::span<const double> dL_dfeature, const RasterConfig &cfg,
                                  const BackwardOptions &opts) {
    require(features.size() == scene.size() * scene.feature_dim(), ErrorCode::Contract, "feature copy has wrong size");
    return backward<float>(scene, features, cam, target, dL_dcolor, dL_dfeature, cfg, opts);
}

ImageF render_feature_pca(const RenderTarget &target) {
    const int d = target.feature_dim;
    require(target.width > 0 && target.height > 0 && d > 0, ErrorCode::Contract,
            "feature PCA needs a non-empty target with features");
    const std::size_t npix = std::size_t(target.width) * target.height;
    ImageF img(target.width, target.height, 3);
    std::fill(img.data.begin(), img.data.end(), 0.5);

    std::vector<std::size_t> valid;
    for (std::size_t p = 0; p < npix; ++p)
        if (target.alpha[p] > 0.0) valid.push_back(p);
    if (valid.empty()) return img;

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (auto p : valid) mean += Eigen::Map<const Eigen::VectorXd>(target.feature.data() + p * d, d);
    mean /= double(valid.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (auto p : valid) {
        const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(target.feature.data() + p * d, d) - mean;
        cov.noalias() += c * c.transpose();
    }
    cov /= double(valid.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());

    for (int c = 0; c < std::min(3, d); ++c) {
        const int col = d - 1 - c;
        if (eig.eigenvalues()[col] <= 1e-12 * scale) continue;
        Eigen::VectorXd axis = eig.eigenvectors().col(col);
        Eigen::Index arg;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis[arg] < 0) axis = -axis;
        std::vector<double> proj(valid.size());
        for (std::size_t v = 0; v < valid.size(); ++v)
            proj[v] = (Eigen::Map<const Eigen::VectorXd>(target.feature.data() + valid[v] * d, d) - mean).dot(axis);
        const auto [lo, hi] = std::minmax_element(proj.begin(), proj.end());
        const double range = *hi - *lo;
        if (!(range > 0.0)) continue;
        for (std::size_t v = 0; v < valid.size(); ++v) img.data[valid[v] * 3 + c] = (proj[v] - *lo) / range;
    }
    return img;
}

} // namespace fsplat::raster
