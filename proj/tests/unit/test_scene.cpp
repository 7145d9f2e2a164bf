#include <doctest.h>

#include "../support/oracles.hpp"

#include "fsplat/binary.hpp"
#include "fsplat/dataset.hpp"
#include "fsplat/error.hpp"
#include "fsplat/scene.hpp"

#include <Eigen/Eigenvalues>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <cstring>
#include <functional>

using namespace fsplat;

namespace {

std::filesystem::path temp_dir(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() / ("fsplat_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    FAIL("expected an fsplat::Error");
    return ErrorCode::BadRequest;
}

} // namespace

TEST_CASE("activate: identity parameters") {
    const auto a = activate(Vec3::Zero(), identity_quat(), 0.0);
    CHECK(a.scale == Vec3::Ones());
    CHECK(a.rotation == Mat3::Identity());
    CHECK(a.covariance == Mat3::Identity());
    CHECK(a.opacity == 0.5);
}

TEST_CASE("activate: anisotropic scale and rotation") {
    const auto a = activate(Vec3(std::log(2.0), 0, 0), identity_quat(), 0.0);
    CHECK((a.covariance - Vec3(4, 1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-12);

    const double h = std::sqrt(0.5);
    const auto b = activate(Vec3(std::log(2.0), 0, 0), Quat(h, 0, 0, h), 0.0);
    CHECK((b.covariance - Vec3(1, 4, 1).asDiagonal().toDenseMatrix()).norm() < 1e-12);
}

TEST_CASE("activate: total on finite inputs, PSD covariance") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-30, 30);
    for (int it = 0; it < 2000; ++it) {
        const Vec3 ls(u(rng) * 0.5, u(rng) * 0.5, u(rng) * 0.5);
        const Quat q(u(rng), u(rng), u(rng), u(rng));
        const auto a = activate(ls, q, u(rng) * 10);
        REQUIRE(a.covariance.allFinite());
        CHECK(a.opacity >= 0.0);
        CHECK(a.opacity <= 1.0);
        CHECK((a.covariance - a.covariance.transpose()).norm() == 0.0);
        Eigen::SelfAdjointEigenSolver<Mat3> es(a.covariance);
        CHECK(es.eigenvalues().minCoeff() >= -1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()));
    }
    // zero quaternion normalizes to identity rather than NaN
    CHECK(activate(Vec3::Zero(), Quat::Zero(), 0.0).rotation == Mat3::Identity());
}

TEST_CASE("quaternion helpers round-trip") {
    const Mat3 R = oracle::axis_rotation(Vec3(1, 2, 3), 1.1);
    CHECK((quat_to_matrix(matrix_to_quat(R)) - R).norm() < 1e-12);
    const Quat a = matrix_to_quat(oracle::axis_rotation(Vec3(0, 0, 1), 0.5));
    const Quat b = matrix_to_quat(oracle::axis_rotation(Vec3(1, 0, 0), 0.7));
    CHECK((quat_to_matrix(quat_multiply(a, b)) - quat_to_matrix(a) * quat_to_matrix(b)).norm() < 1e-12);
}

TEST_CASE("scene file round-trips bit-exactly") {
    GaussianScene s = oracle::random_scene(11, 100, 3, 32);
    s.metadata.scene_scale = 2.5;
    s.metadata.units = "metres";
    // exercise half-precision corner values
    s.features[0] = half_from_bits(0x7bff);
    s.features[1] = half_from_bits(0x0001);
    s.features[2] = half_from_bits(0x8000);
    const auto dir = temp_dir("roundtrip");
    save_scene(s, dir / "s.fspl");
    const GaussianScene r = load_scene(dir / "s.fspl");
    CHECK(bitwise_equal(s, r));
    CHECK(r.metadata.units == "metres");
    CHECK(encode_scene(r) == encode_scene(s));
}

TEST_CASE("empty scene is header-only") {
    GaussianScene s;
    const auto bytes = encode_scene(s);
    CHECK(bytes.size() == kSceneHeaderSize);
    CHECK(decode_scene(bytes).size() == 0);
}

TEST_CASE("bad magic and bad version are format errors") {
    auto bytes = encode_scene(oracle::random_scene(1, 3));
    auto bad = bytes;
    bad[0] = 'X', bad[1] = 'X', bad[2] = 'X', bad[3] = 'X';
    CHECK(code_of([&] { decode_scene(bad); }) == ErrorCode::Format);
    bad = bytes;
    bad[4] = 99;
    CHECK(code_of([&] { decode_scene(bad); }) == ErrorCode::Format);
    bad = bytes;
    bad.resize(bad.size() - 5);
    CHECK(code_of([&] { decode_scene(bad); }) == ErrorCode::Format);
}

TEST_CASE("NaN centroid is a validation error naming the index") {
    GaussianScene s = oracle::random_scene(2, 4);
    auto bytes = encode_scene(s);
    // CENT is the first chunk: x column, then y column
    const double nan = std::nan(""), inf = INFINITY;
    std::memcpy(bytes.data() + kSceneHeaderSize + 12, &nan, 8);
    std::memcpy(bytes.data() + kSceneHeaderSize + 12 + 8 * (4 + 2), &inf, 8);
    try {
        decode_scene(bytes);
        FAIL("expected validation error");
    } catch (const ValidationError &e) {
        CHECK(e.indices() == std::vector<std::size_t>{0, 2});
        CHECK(std::string(e.what()).find('0') != std::string::npos);
    }
}

TEST_CASE("subset keeps the requested Gaussians") {
    GaussianScene s = oracle::random_scene(3, 10);
    const std::vector<std::size_t> keep{1, 4, 9};
    const GaussianScene sub = s.subset(keep);
    REQUIRE(sub.size() == 3);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        CHECK(sub.centroids[k] == s.centroids[keep[k]]);
        CHECK(half_bits(sub.feature_of(k)[0]) == half_bits(s.feature_of(keep[k])[0]));
    }
}

TEST_CASE("RLE masks") {
    BinaryMask ones(4, 4);
    std::fill(ones.bits.begin(), ones.bits.end(), 1);
    const auto runs = rle_encode(ones);
    CHECK(rle_decode(4, 4, runs).count() == 16);

    BinaryMask m(3, 5);
    m.bits[0] = m.bits[3] = m.bits[4] = m.bits[14] = 1;
    CHECK(rle_decode(3, 5, rle_encode(m)).bits == m.bits);
    CHECK(decode_masks(encode_masks({m, ones}))[1].bits == ones.bits);

    const std::vector<std::uint32_t> short_runs{3, 2};
    CHECK(code_of([&] { rle_decode(3, 5, short_runs); }) == ErrorCode::Format);
}

TEST_CASE("feature map file and bilinear resize") {
    FeatureMap m(2, 3, 2);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = Half(float(i) * 0.5f);
    const auto back = decode_feature_map(encode_feature_map(m));
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(half_bits(back.data[i]) == half_bits(m.data[i]));

    // constant maps stay constant; a 1x2 ramp doubled keeps its end values and midpoint
    FeatureMapD c(1, 2, 1);
    c.data = {0.0, 1.0};
    const auto up = resize_bilinear(c, 1, 4);
    CHECK(up.data[0] == doctest::Approx(0.0));
    CHECK(up.data[1] == doctest::Approx(0.25));
    CHECK(up.data[2] == doctest::Approx(0.75));
    CHECK(up.data[3] == doctest::Approx(1.0));
}

TEST_CASE("dataset round-trip and mismatched mask names the view") {
    FeatureDataset ds;
    for (int v = 0; v < 2; ++v) {
        DatasetView view;
        view.camera = oracle::orbit_camera(v, 8, 6, 5.0);
        view.rgb = Image8(8, 6, 3);
        for (std::size_t i = 0; i < view.rgb.data.size(); ++i) view.rgb.data[i] = std::uint8_t(i * 7 + v);
        view.clip = FeatureMap(3, 4, 4);
        view.dino = FeatureMap(3, 4, 2);
        for (auto &x : view.clip.data) x = Half(0.25f);
        BinaryMask mask(6, 8);
        mask.bits[5] = 1;
        view.masks.push_back(mask);
        ds.views.push_back(view);
    }
    ds.vocab["a"] = Eigen::VectorXd::Unit(4, 0);
    ds.vocab["b"] = Eigen::VectorXd::Unit(4, 1);
    ds.holdout = {1};
    const auto dir = temp_dir("dataset");
    save_dataset(ds, dir);
    const auto back = load_dataset(dir);
    REQUIRE(back.views.size() == 2);
    CHECK(back.views[1].rgb.data == ds.views[1].rgb.data);
    CHECK(back.views[0].masks[0].bits == ds.views[0].masks[0].bits);
    CHECK(back.holdout == ds.holdout);
    CHECK(back.training_views() == std::vector<int>{0});
    CHECK((back.vocab.at("b") - ds.vocab.at("b")).norm() < 1e-6);
    CHECK((back.views[1].camera.world_to_camera - ds.views[1].camera.world_to_camera).norm() < 1e-12);

    ds.views[1].masks[0] = BinaryMask(5, 8);
    try {
        ds.validate();
        FAIL("expected validation error");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::Validation);
        CHECK(std::string(e.what()).find("view 1") != std::string::npos);
    }
    ds.views[1].masks[0] = BinaryMask(6, 8);
    ds.vocab["c"] = Eigen::VectorXd::Constant(4, 1.0);
    CHECK(code_of([&] { ds.validate(); }) == ErrorCode::Validation);
}

TEST_CASE("camera validation and JSON") {
    Camera cam = oracle::orbit_camera(0.4, 10, 10);
    CHECK_NOTHROW(cam.validate());
    const Camera back = camera_from_json(camera_to_json(cam));
    CHECK(back.world_to_camera == cam.world_to_camera);
    cam.world_to_camera(0, 0) *= 1.01;
    CHECK(code_of([&] { cam.validate(); }) == ErrorCode::Contract);
    Camera flip;
    flip.world_to_camera(2, 2) = -1;
    CHECK(code_of([&] { flip.validate(); }) == ErrorCode::Contract);
}
