#include <doctest.h>

#include "fsplat/edit.hpp"
#include "fsplat/error.hpp"
#include "fsplat/synthetic.hpp"

#include "../support/edit_helpers.hpp"
#include "../support/fixtures.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace fsplat;
using namespace fsplat::edit;
using namespace edit_helpers;

namespace {

/// CIE L*a*b* (D65) of an sRGB-encoded colour.
Vec3 srgb_to_lab(const Vec3 &rgb) {
    auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const Vec3 l(lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    Mat3 m;
    m << 0.4124564, 0.3575761, 0.1804375, 0.2126729, 0.7151522, 0.0721750, 0.0193339, 0.1191920, 0.9503041;
    const Vec3 xyz = m * l;
    const Vec3 white(0.95047, 1.0, 1.08883);
    auto f = [](double t) { return t > 216.0 / 24389.0 ? std::cbrt(t) : (24389.0 / 27.0 * t + 16.0) / 116.0; };
    const double fx = f(xyz[0] / white[0]), fy = f(xyz[1] / white[1]), fz = f(xyz[2] / white[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

class ZeroProvider : public LossProvider {
public:
    LossResult evaluate(const ImageF &image, int) override {
        ++calls;
        return {0.0, std::vector<double>(image.data.size(), 0.0)};
    }
    int calls = 0;
};

class FailingProvider : public LossProvider {
public:
    LossResult evaluate(const ImageF &, int) override {
        if (++calls > 3) fail(ErrorCode::Provider, "provider gave up");
        return {};
    }
    int calls = 0;
};

Camera front_camera(int size = 32) {
    return Camera::look_at(Vec3(0, -3, 0.5), Vec3(0, 0, 0.5), Vec3::UnitZ(), size, size, size, size);
}

} // namespace

TEST_CASE("remove: all, none, count") {
    std::mt19937_64 rng(1);
    const auto s = random_scene(rng, 30);
    CHECK(remove(s, fixture::all_indices(s)).empty());
    CHECK(bitwise_equal(remove(s, {}), s));
    const std::vector<std::size_t> sel{0, 5, 29};
    const auto r = remove(s, sel);
    CHECK(r.size() == 27);
    CHECK(same_gaussian(s, 1, r, 0));
    CHECK(same_gaussian(s, 28, r, 26));
    const std::vector<std::size_t> bad{3, 3};
    CHECK_THROWS_AS(remove(s, bad), Error);
    const std::vector<std::size_t> out_of_range{30};
    CHECK_THROWS_AS(remove(s, out_of_range), Error);
}

TEST_CASE("remove one synthetic object leaves the other's footprint") {
    synthetic::SyntheticConfig cfg;
    cfg.objects.pop_back(); // vase and box, no floor
    cfg.views = 4;
    cfg.width = cfg.height = 64;
    cfg.focal = 60;
    const auto syn = synthetic::make_scene(cfg);
    std::vector<std::size_t> vase;
    for (std::size_t i = 0; i < syn.ground_truth.size(); ++i)
        if (syn.ground_truth_labels[i] == 0) vase.push_back(i);
    const auto edited = remove(syn.ground_truth, vase);

    // independent oracle: the box alone, rebuilt with a different sampling seed
    GaussianScene box_only(syn.ground_truth.sh_degree(), 1);
    synthetic::add_object(box_only, cfg.objects[1], cfg.spacing, 0, 99);
    for (const auto &view : syn.dataset.views) {
        const Camera &cam = view.camera;
        const auto want = synthetic::object_mask(box_only, cam, 0);
        const auto t = raster::rasterize(edited, cam);
        std::size_t inter = 0, uni = 0;
        for (std::size_t p = 0; p < want.bits.size(); ++p) {
            const bool got = t.alpha[p] > 0.5;
            inter += got && want.bits[p];
            uni += got || want.bits[p];
        }
        REQUIRE(uni > 0);
        CHECK(double(inter) / double(uni) >= 0.95);
    }
}

TEST_CASE("translate: zero, unit example, features untouched") {
    std::mt19937_64 rng(2);
    const auto s = random_scene(rng, 10);
    const auto sel = random_selection(rng, s.size());
    CHECK(bitwise_equal(translate(s, sel, Vec3::Zero()), s));

    GaussianScene one(0, 0);
    Gaussian g;
    g.centroid = Vec3(1, 0, 0);
    one.push_back(g);
    const std::vector<std::size_t> first{0};
    const auto t = translate(one, first, Vec3(1, 0, 0));
    CHECK(t.centroids[0] == Vec3(2, 0, 0));
    CHECK(t.log_scales == one.log_scales);
    CHECK(t.rotations == one.rotations);
}

TEST_CASE("translating the object equals moving the camera the other way") {
    auto s = fixture::sphere_shell(300, 0.4, Vec3(0, 0, 0.5));
    const auto all = fixture::all_indices(s);
    const Vec3 b(0.13, -0.2, 0.07);
    const Camera cam = front_camera(48);
    Camera moved = cam;
    moved.world_to_camera.topRightCorner<3, 1>() = cam.translation() + cam.rotation() * b;
    const auto a = raster::rasterize(translate(s, all, b), cam);
    const auto c = raster::rasterize(s, moved);
    double worst = 0.0;
    for (std::size_t p = 0; p < a.color.size(); ++p) worst = std::max(worst, std::abs(a.color[p] - c.color[p]));
    CHECK(worst <= 1e-9);
}

TEST_CASE("rotate: identity, quarter turn of an anisotropic covariance, pivot") {
    std::mt19937_64 rng(3);
    const auto s = random_scene(rng, 10);
    const auto sel = random_selection(rng, s.size());
    const auto same = rotate(s, sel, Mat3::Identity());
    CHECK(same.centroids == s.centroids);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK((same.rotations[i] - s.rotations[i]).norm() == 0.0);

    GaussianScene one(0, 0);
    Gaussian g;
    g.centroid = Vec3(1, 0, 0);
    g.log_scale = Vec3(std::log(2.0), 0.0, 0.0); // Sigma = diag(4, 1, 1)
    one.push_back(g);
    const std::vector<std::size_t> first{0};
    const Mat3 rz = axis_angle(Vec3::UnitZ(), 90.0);
    const auto r = rotate(one, first, rz, Vec3::Zero());
    CHECK((r.centroids[0] - Vec3(0, 1, 0)).norm() <= 1e-15);
    const Mat3 want = Vec3(1, 4, 1).asDiagonal();
    const Mat3 got = activate(r.log_scales[0], r.rotations[0], r.opacity_logits[0]).covariance;
    CHECK((got - want).norm() <= 1e-12);
    // the activated covariance is R1 R S S^T R^T R1^T
    const auto a0 = activate(g);
    CHECK((got - rz * a0.covariance * rz.transpose()).norm() <= 1e-12);

    Mat3 skew = Mat3::Identity();
    skew(0, 1) = 0.1;
    CHECK_THROWS_AS(rotate(one, first, skew), Error);
    CHECK_THROWS_AS(rotate(one, first, -Mat3::Identity()), Error);
}

TEST_CASE("scale: identity, isotropic example, ellipsoid volume") {
    std::mt19937_64 rng(4);
    const auto s = random_scene(rng, 12);
    const auto sel = random_selection(rng, s.size());
    CHECK(bitwise_equal(scale(s, sel, Vec3::Ones()), s));

    GaussianScene one(0, 0);
    Gaussian g;
    g.centroid = Vec3(1, 0, 0);
    g.log_scale = Vec3(-1.0, -0.5, 0.2);
    g.rotation = quat_normalized(Quat(0.9, 0.1, -0.3, 0.2));
    one.push_back(g);
    const std::vector<std::size_t> first{0};
    const auto twice = scale(one, first, Vec3::Constant(2.0), Vec3::Zero());
    CHECK(twice.centroids[0] == Vec3(2, 0, 0));
    const Mat3 c0 = activate(g).covariance;
    const Mat3 c1 = activate(twice.log_scales[0], twice.rotations[0], 0.0).covariance;
    CHECK((c1 - 4.0 * c0).norm() <= 1e-12 * c0.norm());

    // volume of the 3-sigma ellipsoid is (4/3) pi 27 sqrt(det Sigma)
    auto volume = [](const GaussianScene &sc, std::size_t i) {
        const Mat3 c = activate(sc.log_scales[i], sc.rotations[i], 0.0).covariance;
        return 4.0 / 3.0 * std::numbers::pi * 27.0 * std::sqrt(c.determinant());
    };
    for (const Vec3 &f : {Vec3(1.5, 1.5, 1.5), Vec3(0.5, 2.0, 3.0)}) {
        const auto sc = scale(s, sel, f);
        for (auto i : sel) CHECK(volume(sc, i) == doctest::Approx(volume(s, i) * f.prod()).epsilon(1e-9));
        CHECK(unselected_untouched(s, sc, sel));
    }
    CHECK_THROWS_AS(scale(s, sel, Vec3(1, 0, 1)), Error);
}

TEST_CASE("anisotropic scale acts in the principal frame") {
    // a selection elongated along the diagonal of the xy plane
    GaussianScene s(0, 0);
    const Vec3 axis = Vec3(1, 1, 0).normalized();
    for (int i = -5; i <= 5; ++i) {
        Gaussian g;
        g.centroid = 0.1 * i * axis + Vec3(0, 0, 0.001 * (i % 2));
        g.log_scale = Vec3::Constant(-3.0);
        s.push_back(g);
    }
    const auto all = fixture::all_indices(s);
    const Mat3 frame = principal_frame(s, all);
    CHECK(std::abs(std::abs(frame.col(2).dot(axis)) - 1.0) <= 1e-5);
    CHECK(frame.determinant() == doctest::Approx(1.0));
    const auto stretched = scale(s, all, Vec3(1, 1, 3));
    const Vec3 c = selection_center(s, all);
    for (auto i : all) {
        const Vec3 d0 = s.centroids[i] - c, d1 = stretched.centroids[i] - c;
        CHECK((d1 - d0 - 2.0 * d0.dot(frame.col(2)) * frame.col(2)).norm() <= 1e-12);
    }
}

TEST_CASE("clone appends copies, remove undoes it") {
    std::mt19937_64 rng(5);
    const auto s = random_scene(rng, 25);
    const auto sel = random_selection(rng, s.size());
    const auto c = clone(s, sel, Vec3(0.5, 0, 0));
    CHECK(c.size() == s.size() + sel.size());
    for (std::size_t k = 0; k < sel.size(); ++k) {
        const auto fa = s.feature_of(sel[k]), fb = c.feature_of(s.size() + k);
        for (std::size_t d = 0; d < fa.size(); ++d) CHECK(half_bits(fa[d]) == half_bits(fb[d]));
        CHECK(c.centroids[s.size() + k] == s.centroids[sel[k]] + Vec3(0.5, 0, 0));
    }
    std::vector<std::size_t> clones(sel.size());
    for (std::size_t k = 0; k < clones.size(); ++k) clones[k] = s.size() + k;
    CHECK(bitwise_equal(remove(c, clones), s));
}

TEST_CASE("algebra: inverses and non-selected Gaussians") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_scene(rng, 40);
        const auto sel = random_selection(rng, s.size());

        // dyadic offsets on dyadic centroids round-trip exactly
        GaussianScene d = s;
        for (auto &x : d.centroids) x = (x * 1024.0).array().round() / 1024.0;
        const Vec3 b = (Vec3(u(rng), u(rng), u(rng)) * 256.0).array().round() / 256.0;
        CHECK(bitwise_equal(translate(translate(d, sel, b), sel, -b), d));

        // arbitrary offsets: at most one rounding step per coordinate
        const Vec3 bb(u(rng), u(rng), u(rng));
        const auto t = translate(translate(s, sel, bb), sel, -bb);
        for (auto i : sel)
            for (int k = 0; k < 3; ++k)
                CHECK(std::abs(t.centroids[i][k] - s.centroids[i][k]) <=
                      2.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(s.centroids[i][k]), std::abs(bb[k])));

        const Mat3 r = random_rotation(rng);
        const Vec3 pivot(u(rng), u(rng), u(rng));
        const auto rr = rotate(rotate(s, sel, r, pivot), sel, Mat3(r.transpose()), pivot);
        for (auto i : sel) {
            CHECK((rr.centroids[i] - s.centroids[i]).norm() <= 1e-12);
            const Quat a = quat_normalized(rr.rotations[i]), q = quat_normalized(s.rotations[i]);
            CHECK(std::min((a - q).norm(), (a + q).norm()) <= 1e-12);
        }

        CHECK(unselected_untouched(s, translate(s, sel, bb), sel));
        CHECK(unselected_untouched(s, rotate(s, sel, r), sel));
        CHECK(unselected_untouched(s, scale(s, sel, Vec3(0.5, 2.0, 1.5)), sel));
        CHECK(unselected_untouched(s, scale(s, sel, Vec3::Constant(1.7)), sel));
        const auto c = clone(s, sel, bb);
        CHECK(unselected_untouched(s, c, {}));
        std::vector<std::size_t> keep;
        std::size_t j = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (j < sel.size() && sel[j] == i) {
                ++j;
                continue;
            }
            keep.push_back(i);
        }
        const auto removed = remove(s, sel);
        for (std::size_t k = 0; k < keep.size(); ++k) CHECK(same_gaussian(s, keep[k], removed, k));
    }
}

TEST_CASE("scripts: parse, canonical form, application") {
    const auto j = nlohmann::json::parse(R"({"ops": [
        {"op": "translate", "by": [1, 0, 0]},
        {"op": "rotate", "axis": [0, 0, 1], "degrees": 90, "pivot": [0, 0, 0]},
        {"op": "scale", "factor": 2},
        {"op": "clone", "offset": [0, 1, 0], "select_clones": true},
        {"op": "remove"}
    ]})");
    const auto script = parse_script(j);
    REQUIRE(script.ops.size() == 5);
    CHECK(script.ops[1].pivot.has_value());
    CHECK((script.ops[1].matrix - axis_angle(Vec3::UnitZ(), 90)).norm() <= 1e-15);
    CHECK(script.ops[2].vector == Vec3::Constant(2.0));
    const auto canon = to_json(script);
    CHECK(to_json(parse_script(canon)) == canon);
    CHECK(canon["ops"][2]["factor"].size() == 3);
    CHECK(to_json(parse_script(j["ops"])) == canon); // bare array

    GaussianScene one(0, 0);
    Gaussian g;
    g.centroid = Vec3(0, 0, 0);
    one.push_back(g);
    const auto r = apply_script(one, {0}, parse_script(nlohmann::json::parse(R"([
        {"op": "translate", "by": [1, 0, 0]},
        {"op": "rotate", "axis": [0, 0, 1], "degrees": 90, "pivot": [0, 0, 0]},
        {"op": "clone", "offset": [0, 0, 1], "select_clones": true},
        {"op": "translate", "by": [0, 0, 1]}
    ])")));
    REQUIRE(r.scene.size() == 2);
    CHECK((r.scene.centroids[0] - Vec3(0, 1, 0)).norm() <= 1e-15);
    CHECK((r.scene.centroids[1] - Vec3(0, 1, 2)).norm() <= 1e-15);
    CHECK(r.selection == std::vector<std::size_t>{1});

    const auto gone = apply_script(one, {0}, parse_script(nlohmann::json::parse(R"([{"op": "remove"}, {"op": "translate", "by": [1, 1, 1]}])")));
    CHECK(gone.scene.empty());
    CHECK(gone.selection.empty());

    std::mt19937_64 rng(7);
    const auto s = random_scene(rng, 10);
    CHECK(bitwise_equal(apply_script(s, {1, 2}, EditScript{}).scene, s));

    for (const char *bad : {R"({"op": "translate"})", R"([{"op": "warp"}])", R"([{"op": "translate", "by": [1, 2]}])",
                            R"([{"op": "scale", "factor": -1}])", R"([{"op": "rotate", "axis": [0, 0, 0], "degrees": 5}])",
                            R"({"steps": []})", R"([{"op": "rotate", "axis": [0, 0, 1]}])"}) {
        CAPTURE(bad);
        try {
            parse_script(nlohmann::json::parse(bad));
            FAIL("expected an error");
        } catch (const Error &e) {
            CHECK(e.code() == ErrorCode::BadRequest);
        }
    }
}

TEST_CASE("random scripts keep scenes valid") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> kind(0, 4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const auto s = random_scene(rng, 20);
        EditScript script;
        for (int k = 0; k < 6; ++k) {
            EditOp op;
            op.kind = EditOp::Kind(kind(rng));
            if (op.kind == EditOp::Kind::Remove && k < 5) op.kind = EditOp::Kind::Translate;
            op.vector = op.kind == EditOp::Kind::Scale ? Vec3(1.0 + 0.5 * u(rng), 1.0 + 0.5 * u(rng), 1.0 + 0.5 * u(rng))
                                                       : Vec3(u(rng), u(rng), u(rng));
            op.matrix = random_rotation(rng);
            op.select_clones = u(rng) > 0;
            script.ops.push_back(op);
        }
        const auto r = apply_script(s, random_selection(rng, s.size()), script);
        CHECK_NOTHROW(r.scene.validate());
        for (auto i : r.selection) CHECK(i < r.scene.size());
        for (const auto &q : r.scene.rotations) CHECK(std::abs(q.norm() - 1.0) <= 1e-9);
    }
}

TEST_CASE("appearance: target colour turns the selection red, nothing else changes") {
    auto s = fixture::sphere_shell(200, 0.35, Vec3(-0.45, 0, 0.5));
    const std::size_t n_red = s.size();
    auto other = fixture::sphere_shell(200, 0.3, Vec3(0.5, 0.5, 0.5));
    for (std::size_t i = 0; i < other.size(); ++i) s.append_from(other, i);
    std::vector<std::size_t> sel(n_red);
    for (std::size_t i = 0; i < n_red; ++i) sel[i] = i;

    const std::vector<Camera> views{front_camera(32),
                                    Camera::look_at(Vec3(2.5, -2, 1.5), Vec3(0, 0, 0.5), Vec3::UnitZ(), 32, 32, 32, 32)};
    std::vector<std::vector<std::uint8_t>> masks;
    for (const auto &v : views) masks.push_back(selection_mask(s, sel, v));
    TargetColorProvider red(Vec3(1, 0, 0), masks);
    const auto out = optimize_appearance(s, sel, red, views);

    // only SH of the selection moved
    CHECK(out.centroids == s.centroids);
    CHECK(out.log_scales == s.log_scales);
    CHECK(out.rotations == s.rotations);
    CHECK(out.opacity_logits == s.opacity_logits);
    CHECK(unselected_untouched(s, out, sel));

    const Vec3 red_lab = srgb_to_lab(Vec3(1, 0, 0));
    GaussianScene only_sel = s.subset(sel);
    for (std::size_t v = 0; v < views.size(); ++v) {
        const auto before = raster::rasterize(s, views[v]);
        const auto after = raster::rasterize(out, views[v]);
        Vec3 mean = Vec3::Zero();
        std::size_t count = 0;
        for (std::size_t p = 0; p < masks[v].size(); ++p)
            if (masks[v][p]) {
                mean += after.color_at(int(p % 32), int(p / 32));
                ++count;
            }
        REQUIRE(count > 20);
        mean /= double(count);
        CHECK((srgb_to_lab(mean.cwiseMax(0.0).cwiseMin(1.0)) - red_lab).norm() < 10.0);

        // pixels outside every selected splat's support are bit-unchanged
        const auto footprint = raster::rasterize(only_sel, views[v]);
        std::size_t outside = 0;
        for (std::size_t p = 0; p < footprint.alpha.size(); ++p) {
            if (footprint.alpha[p] != 0.0) continue;
            ++outside;
            for (int c = 0; c < 3; ++c) CHECK(same_bits(before.color[3 * p + c], after.color[3 * p + c]));
        }
        CHECK(outside > 0);
    }
}

TEST_CASE("appearance: zero gradient and zero iterations are identities") {
    const auto s = fixture::sphere_shell(100, 0.35, Vec3(0, 0, 0.5));
    const auto all = fixture::all_indices(s);
    ZeroProvider zero;
    AppearanceConfig cfg;
    cfg.iterations = 20;
    CHECK(bitwise_equal(optimize_appearance(s, all, zero, {front_camera()}, cfg), s));
    CHECK(zero.calls == 20);
    cfg.iterations = 0;
    CHECK(bitwise_equal(optimize_appearance(s, all, zero, {front_camera()}, cfg), s));
    CHECK(zero.calls == 20);
}

TEST_CASE("appearance: provider failure propagates") {
    const auto s = fixture::sphere_shell(100, 0.35, Vec3(0, 0, 0.5));
    const auto copy = s;
    FailingProvider failing;
    AppearanceConfig cfg;
    cfg.iterations = 10;
    try {
        optimize_appearance(s, fixture::all_indices(s), failing, {front_camera()}, cfg);
        FAIL("expected an error");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::Provider);
    }
    CHECK(bitwise_equal(s, copy));
}

TEST_CASE("subprocess provider speaks the framing") {
    const auto s = fixture::sphere_shell(100, 0.35, Vec3(0, 0, 0.5));
    const auto all = fixture::all_indices(s);
    const Camera cam = front_camera(16);
    const auto img = raster::rasterize(s, cam).color_image();

    SUBCASE("round trip matches the in-process loss") {
        SubprocessProvider p({FSPLAT_LOSS_HELPER, "red"});
        std::vector<std::vector<std::uint8_t>> full{std::vector<std::uint8_t>(16 * 16, 1)};
        TargetColorProvider local(Vec3(1, 0, 0), full);
        for (int k = 0; k < 3; ++k) {
            const auto a = p.evaluate(img, 0);
            const auto b = local.evaluate(img, 0);
            CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-6));
            REQUIRE(a.gradient.size() == b.gradient.size());
            for (std::size_t i = 0; i < a.gradient.size(); ++i)
                CHECK(a.gradient[i] == doctest::Approx(b.gradient[i]).epsilon(1e-5).scale(1e-7));
        }
    }
    SUBCASE("a provider that dies mid-run aborts the optimization") {
        SubprocessProvider p({FSPLAT_LOSS_HELPER, "die", "2"});
        AppearanceConfig cfg;
        cfg.iterations = 10;
        CHECK_THROWS_AS(optimize_appearance(s, all, p, {cam}, cfg), Error);
        CHECK_THROWS_AS(p.evaluate(img, 0), Error);
    }
    SUBCASE("bad magic") {
        SubprocessProvider p({FSPLAT_LOSS_HELPER, "garbage"});
        try {
            p.evaluate(img, 0);
            FAIL("expected an error");
        } catch (const Error &e) {
            CHECK(e.code() == ErrorCode::Provider);
        }
    }
    SUBCASE("missing program") {
        SubprocessProvider p({"/nonexistent/loss-provider"});
        CHECK_THROWS_AS(p.evaluate(img, 0), Error);
    }
}
