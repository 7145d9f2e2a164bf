#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"

#include "fsplat/error.hpp"
#include "fsplat/rasterizer.hpp"

using namespace fsplat;
using namespace fsplat::raster;

namespace {

Camera unit_camera(int w = 1, int h = 1) {
    Camera cam;
    cam.fx = cam.fy = 1.0;
    cam.cx = cam.cy = 0.0;
    cam.width = w;
    cam.height = h;
    return cam;
}

GaussianScene single(const Vec3 &c, double log_scale, double opacity, const Vec3 &rgb, int dim = 4) {
    GaussianScene s(0, dim);
    Gaussian g;
    g.centroid = c;
    g.log_scale = Vec3::Constant(log_scale);
    g.opacity_logit = inverse_sigmoid(opacity);
    g.sh = {sh::rgb_to_dc(rgb)};
    g.feature.assign(dim, Half(0.0f));
    g.feature[0] = Half(1.0f);
    s.push_back(g);
    return s;
}

double max_diff(const std::vector<double> &a, const std::vector<double> &b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("project: unit Gaussian on the optical axis") {
    const auto s = single(Vec3(0, 0, 1), 0.0, 0.5, Vec3::Zero());
    const auto p = project(s, unit_camera(), 0.1);
    REQUIRE(p.size() == 1);
    CHECK((p[0].cov2d - 1.3 * Mat2::Identity()).norm() < 1e-12);
    CHECK(p[0].mean2d.norm() < 1e-12);
    CHECK(p[0].depth == 1.0);
}

TEST_CASE("project: off-axis Jacobian") {
    const auto s = single(Vec3(0.5, 0, 2), 0.0, 0.5, Vec3::Zero());
    const auto p = project(s, unit_camera(), 0.1);
    REQUIRE(p.size() == 1);
    Eigen::Matrix<double, 2, 3> J;
    J << 0.5, 0, -0.125, 0, 0.5, 0;
    const Mat2 expect = J * J.transpose() + 0.3 * Mat2::Identity();
    CHECK((p[0].cov2d - expect).norm() < 1e-12);
    CHECK((p[0].cov2d - p[0].cov2d.transpose()).norm() == 0.0);
}

TEST_CASE("project: culling") {
    CHECK(project(single(Vec3(0, 0, -1), 0.0, 0.5, Vec3::Zero()), unit_camera(), 0.1).empty());
    CHECK(project(single(Vec3(0, 0, 0.05), 0.0, 0.5, Vec3::Zero()), unit_camera(), 0.1).empty());
    // far outside the frustum even with the 3-sigma margin
    CHECK(project(single(Vec3(100, 0, 1), -3.0, 0.5, Vec3::Zero()), unit_camera(8, 8), 0.1).empty());
    auto zero = single(Vec3(0, 0, 1), 0.0, 0.5, Vec3::Zero());
    zero.opacity_logits[0] = -INFINITY;
    CHECK(project(zero, unit_camera(), 0.1).empty());
}

TEST_CASE("rasterize: single Gaussian centered on a pixel") {
    Camera cam = unit_camera(9, 9);
    cam.fx = cam.fy = 20.0;
    cam.cx = cam.cy = 4.0;
    const auto s = single(Vec3(0, 0, 2), std::log(0.05), 0.7, Vec3(0.2, 0.4, 0.6));
    const auto t = rasterize(s, cam);
    const auto f = t.feature_at(4, 4);
    CHECK(f[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(f[1] == 0.0);
    CHECK(t.alpha[t.pixel(4, 4)] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(t.color_at(4, 4)[1] == doctest::Approx(0.7 * 0.4).epsilon(1e-12));
}

TEST_CASE("rasterize: two coincident Gaussians composite front to back") {
    Camera cam = unit_camera(5, 5);
    cam.fx = cam.fy = 10.0;
    cam.cx = cam.cy = 2.0;
    GaussianScene s = single(Vec3(0, 0, 2), std::log(0.05), 0.5, Vec3(1, 0, 0));
    s.append_from(single(Vec3(0, 0, 2), std::log(0.05), 0.5, Vec3(0, 0, 1)), 0);
    const auto t = rasterize(s, cam);
    const Vec3 c = t.color_at(2, 2);
    CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("rasterize equals the brute-force compositor") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = oracle::random_scene(seed, 8 + int(seed * 5), 2, 5);
        const Camera cam = oracle::orbit_camera(0.5 * seed, 64, 48, 50.0);
        const auto t = rasterize(s, cam);
        const auto ref = oracle::brute_force(s, cam);
        CHECK(max_diff(t.color, ref.color) < 1e-5);
        CHECK(max_diff(t.feature, ref.feature) < 1e-5);
        CHECK(max_diff(t.alpha, ref.alpha) < 1e-5);
    }
}

TEST_CASE("tile size, threads and feature precision do not change the image") {
    const auto s = oracle::random_scene(4, 40, 1, 6);
    const Camera cam = oracle::orbit_camera(1.0, 50, 40, 45.0);
    const auto base = rasterize(s, cam);
    RasterConfig cfg;
    cfg.tile_size = 7;
    cfg.threads = 3;
    const auto other = rasterize(s, cam, cfg);
    CHECK(max_diff(base.color, other.color) == 0.0);
    CHECK(max_diff(base.feature, other.feature) == 0.0);

    std::vector<float> f32(s.features.size());
    for (std::size_t i = 0; i < f32.size(); ++i) f32[i] = float(s.features[i]);
    const auto single_precision = rasterize(s, f32, cam);
    CHECK(max_diff(base.feature, single_precision.feature) == 0.0);

    cfg = {};
    cfg.max_feature_dim = 4;
    CHECK_THROWS_AS(rasterize(s, cam, cfg), Error);
}

TEST_CASE("features are view independent under camera roll") {
    const auto s = oracle::random_scene(21, 30, 2, 3);
    const Camera a = oracle::orbit_camera(0.7, 41, 41, 40.0);
    Camera b = a;
    Mat4 roll = Mat4::Identity();
    roll.topLeftCorner<3, 3>() = oracle::axis_rotation(Vec3::UnitZ(), M_PI / 2);
    b.world_to_camera = roll * a.world_to_camera;
    const auto ta = rasterize(s, a), tb = rasterize(s, b);
    double worst = 0.0;
    for (int y = 0; y < 41; ++y)
        for (int x = 0; x < 41; ++x) {
            // camera-frame (x, y) -> (-y, x): pixel (u, v) in b sees pixel (v, W-1-u) in a
            const auto fb = tb.feature_at(x, y);
            const auto fa = ta.feature_at(y, 40 - x);
            for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(fa[j] - fb[j]));
        }
    CHECK(worst < 1e-6);
}

TEST_CASE("alpha is monotone when a Gaussian is added") {
    RasterConfig exact;
    exact.min_transmittance = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = oracle::random_scene(seed, 15, 0, 1);
        auto bigger = s;
        bigger.append_from(oracle::random_scene(seed + 100, 1, 0, 1), 0);
        const Camera cam = oracle::orbit_camera(0.2 * seed, 32, 32, 30.0);
        const auto a = rasterize(s, cam, exact), b = rasterize(bigger, cam, exact);
        for (std::size_t p = 0; p < a.alpha.size(); ++p) REQUIRE(b.alpha[p] >= a.alpha[p] - 1e-12);
        // with early termination the final transmittance can only move by the cutoff scale
        const auto c = rasterize(s, cam), d = rasterize(bigger, cam);
        for (std::size_t p = 0; p < c.alpha.size(); ++p) REQUIRE(d.alpha[p] >= c.alpha[p] - 1e-2);
    }
}

TEST_CASE("backward: zero feature loss gives zero feature gradient") {
    const auto s = oracle::random_scene(3, 20, 1, 4);
    const Camera cam = oracle::orbit_camera(0.1, 32, 32, 30.0);
    const auto t = rasterize(s, cam);
    std::vector<double> dc(t.color.size(), 1.0), df(t.feature.size(), 0.0);
    const auto g = rasterize_backward(s, cam, t, dc, df);
    for (double v : g.feature) CHECK(v == 0.0);
}

TEST_CASE("backward: feature gradient at a single center pixel") {
    Camera cam = unit_camera(9, 9);
    cam.fx = cam.fy = 20.0;
    cam.cx = cam.cy = 4.0;
    const auto s = single(Vec3(0, 0, 2), std::log(0.05), 0.7, Vec3(0.2, 0.4, 0.6));
    const auto t = rasterize(s, cam);
    std::vector<double> dc(t.color.size(), 0.0), df(t.feature.size(), 0.0);
    df[t.pixel(4, 4) * 4 + 0] = 1.0;
    const auto g = rasterize_backward(s, cam, t, dc, df);
    CHECK(g.feature[0] == doctest::Approx(t.alpha[t.pixel(4, 4)]).epsilon(1e-12));
    for (int j = 1; j < 4; ++j) CHECK(g.feature[j] == 0.0);
}

TEST_CASE("backward: shape mismatch is a contract error") {
    const auto s = oracle::random_scene(3, 5, 1, 4);
    const Camera cam = oracle::orbit_camera(0.1, 16, 16, 15.0);
    const auto t = rasterize(s, cam);
    std::vector<double> dc(7, 0.0);
    try {
        rasterize_backward(s, cam, t, dc, {});
        FAIL("expected contract error");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::Contract);
    }
}

TEST_CASE("backward: staging buffers and threads give identical gradients") {
    const auto s = oracle::random_scene(9, 30, 1, 4);
    const Camera cam = oracle::orbit_camera(0.4, 40, 40, 35.0);
    const auto loss = oracle::random_loss(9, 40, 40, 4);
    RasterConfig cfg;
    const auto t = rasterize(s, cam, cfg);
    const auto a = rasterize_backward(s, cam, t, loss.wc, loss.wf, cfg);
    cfg.tile_gradient_buffer = false;
    const auto b = rasterize_backward(s, cam, t, loss.wc, loss.wf, cfg);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK((a.centroid[i] - b.centroid[i]).norm() <= 1e-12 * (1 + a.centroid[i].norm()));
        CHECK(std::abs(a.opacity_logit[i] - b.opacity_logit[i]) <= 1e-12 * (1 + std::abs(a.opacity_logit[i])));
    }
    cfg.tile_gradient_buffer = true;
    cfg.threads = 4;
    const auto c = rasterize_backward(s, cam, t, loss.wc, loss.wf, cfg);
    cfg.threads = 4;
    const auto d = rasterize_backward(s, cam, t, loss.wc, loss.wf, cfg);
    CHECK(c.centroid == d.centroid);
    CHECK(c.sh == d.sh);
}

TEST_CASE("backward: decoupled feature gradients leave geometry to the color loss") {
    const auto s = oracle::random_scene(12, 20, 1, 4);
    const Camera cam = oracle::orbit_camera(0.4, 32, 32, 30.0);
    const auto loss = oracle::random_loss(12, 32, 32, 4);
    const auto t = rasterize(s, cam);
    BackwardOptions decoupled;
    decoupled.feature_to_geometry = false;
    const auto with_features = rasterize_backward(s, cam, t, loss.wc, loss.wf, {}, decoupled);
    RasterConfig color_only;
    color_only.render_features = false;
    const auto tc = rasterize(s, cam, color_only);
    const auto without = rasterize_backward(s, cam, tc, loss.wc, {}, color_only);
    CHECK(with_features.centroid == without.centroid);
    CHECK(with_features.opacity_logit == without.opacity_logit);
    CHECK(with_features.rotation == without.rotation);
    CHECK(with_features.log_scale == without.log_scale);
    CHECK(with_features.sh == without.sh);
}

TEST_CASE("backward matches central finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto r = oracle::gradient_check(seed);
        INFO("seed " << seed << " worst " << r.worst_rel << " " << r.worst_name);
        CHECK(r.failed == 0);
        CHECK(r.checked > 100);
        CHECK(r.skipped < r.checked / 5);
    }
}

TEST_CASE("feature PCA visualization") {
    // constant features: no variance, mid-gray everywhere
    RenderTarget flat;
    flat.width = 3;
    flat.height = 3;
    flat.feature_dim = 2;
    flat.alpha.assign(9, 1.0);
    flat.feature.assign(18, 0.25);
    auto pca = render_feature_pca(flat);
    for (double v : pca.data) CHECK(v == 0.5);
    flat.feature.assign(18, 0.0);
    for (double v : render_feature_pca(flat).data) CHECK(v == 0.5);

    // left half e1, right half e2 features: two flat colors
    RenderTarget t;
    t.width = 4;
    t.height = 2;
    t.feature_dim = 3;
    t.alpha.assign(8, 1.0);
    t.feature.assign(24, 0.0);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) t.feature[(y * 4 + x) * 3 + (x < 2 ? 0 : 1)] = 1.0;
    pca = render_feature_pca(t);
    const double left = pca.at(0, 0, 0), right = pca.at(3, 0, 0);
    CHECK(std::abs(left - right) == doctest::Approx(1.0));
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(pca.at(x, y, 0) == (x < 2 ? left : right));
            CHECK(pca.at(x, y, 1) == 0.5);
        }

    CHECK_THROWS_AS(render_feature_pca(RenderTarget{}), Error);
}
