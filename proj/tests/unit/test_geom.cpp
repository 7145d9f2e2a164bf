#include <doctest.h>

#include "../support/oracles.hpp"

#include "fsplat/error.hpp"
#include "fsplat/geom.hpp"

using namespace fsplat;
using namespace fsplat::geom;

TEST_CASE("kd_knn: self query and a line") {
    const std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
    CHECK(kd_knn(line, line[3], 1) == std::vector<std::size_t>{3});
    CHECK(kd_knn(line, line[0], 3) == std::vector<std::size_t>{0, 1, 2});
    // equidistant neighbours come back by index
    CHECK(kd_knn(line, line[2], 3) == std::vector<std::size_t>{2, 1, 3});
    CHECK(kd_knn(line, Vec3(10, 0, 0), 20).size() == 5);
}

TEST_CASE("kd_knn equals brute force on 1000 random sets") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<int> count(1, 200);
    for (int set = 0; set < 1000; ++set) {
        std::vector<Vec3> pts(count(rng));
        for (auto &p : pts) p = Vec3(u(rng), u(rng), u(rng));
        if (set % 5 == 0) // duplicates and lattice ties
            for (auto &p : pts) p = (p * 3).array().round() / 3;
        const KdTree tree(pts);
        for (int q = 0; q < 3; ++q) {
            const Vec3 query = q == 0 ? pts[0] : Vec3(u(rng), u(rng), u(rng));
            const std::size_t k = std::size_t(1 + set % 12);
            REQUIRE(tree.knn(query, k) == oracle::brute_knn(pts, query, k));
        }
    }
}

TEST_CASE("radius search matches brute force") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts(300);
    for (auto &p : pts) p = Vec3(u(rng), u(rng), u(rng));
    const KdTree tree(pts);
    for (int q = 0; q < 20; ++q) {
        const Vec3 c(u(rng), u(rng), u(rng));
        std::vector<std::size_t> expect;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if ((pts[i] - c).norm() <= 0.4) expect.push_back(i);
        CHECK(tree.radius_search(c, 0.4) == expect);
    }
}

TEST_CASE("dbscan: two blobs, noise, all-far") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 6; ++i) pts.emplace_back(0.1 * i, 0, 0);
    for (int i = 0; i < 6; ++i) pts.emplace_back(10 + 0.1 * i, 0, 0);
    pts.emplace_back(5, 5, 5);
    const auto labels = dbscan(pts, 0.15, 3);
    for (int i = 0; i < 6; ++i) CHECK(labels[i] == 0);
    for (int i = 6; i < 12; ++i) CHECK(labels[i] == 1);
    CHECK(labels[12] == kNoise);

    const std::vector<Vec3> far{{0, 0, 0}, {5, 0, 0}, {0, 5, 0}};
    for (int l : dbscan(far, 1.0, 2)) CHECK(l == kNoise);
}

TEST_CASE("dbscan: border points attach to the first cluster that reaches them") {
    // 0-1-2 core chain, 3 is a border point of 2 only
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    const auto labels = dbscan(pts, 1.0, 3);
    CHECK(labels == std::vector<int>{0, 0, 0, 0});
    const auto strict = dbscan(pts, 1.0, 4);
    CHECK(strict == std::vector<int>{kNoise, kNoise, kNoise, kNoise});
}

TEST_CASE("plane fitting") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) pts.emplace_back(i * 0.1, j * 0.1, 2.0);
    const Plane p = ransac_plane(pts, {.iterations = 50, .inlier_tol = 0.01, .seed = 1});
    CHECK(std::abs(std::abs(p.normal.z()) - 1.0) < 1e-12);
    CHECK(std::abs(p.offset * p.normal.z() - 2.0) < 1e-12);
    CHECK(p.inlier_count == pts.size());

    const std::vector<Vec3> three{{0, 0, 1}, {1, 0, 1}, {0, 1, 2}};
    const Plane t = fit_plane(three);
    for (const auto &x : three) CHECK(std::abs(t.signed_distance(x)) < 1e-12);
    CHECK(std::abs(t.normal.norm() - 1.0) < 1e-12);

    const std::vector<Vec3> line{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    CHECK_THROWS_AS(ransac_plane(line), Error);
    try {
        ransac_plane(line);
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::Degenerate);
    }
}

TEST_CASE("RANSAC with outliers: inliers within tolerance, normal within 1 degree") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 450; ++i) pts.emplace_back(u(rng), u(rng), 2.0 + 0.002 * u(rng));
    for (int i = 0; i < 50; ++i) pts.emplace_back(u(rng), u(rng), 2.0 + u(rng));
    const Plane p = ransac_plane(pts, {.iterations = 1000, .inlier_tol = 0.01, .seed = 9});
    CHECK(std::abs(p.normal.z()) > std::cos(M_PI / 180.0));
    for (auto i : plane_inliers(pts, p, 0.01)) CHECK(std::abs(p.signed_distance(pts[i])) <= 0.01);
    // deterministic given the seed
    const Plane again = ransac_plane(pts, {.iterations = 1000, .inlier_tol = 0.01, .seed = 9});
    CHECK(again.normal == p.normal);
    CHECK(again.offset == p.offset);
}

TEST_CASE("RANSAC refit beats the tilt a wide band allows") {
    // tol 0.05 over a 2 m plate lets a 3-point hypothesis tilt by ~2.8 degrees
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> n(0.0, 0.003);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<Vec3> pts;
        for (int i = 0; i < 400; ++i) pts.emplace_back(u(rng), u(rng), n(rng));
        for (int i = 0; i < 40; ++i) pts.emplace_back(u(rng), u(rng), 0.5 + 0.5 * u(rng));
        for (int i = 0; i < 10; ++i) pts.emplace_back(u(rng), u(rng), 0.045 * u(rng));
        const Plane p = ransac_plane(pts, {.iterations = 300, .inlier_tol = 0.05, .seed = seed});
        CAPTURE(seed);
        CHECK(std::abs(p.normal.z()) > std::cos(0.2 * M_PI / 180.0));
        for (auto i : plane_inliers(pts, p, 0.05)) CHECK(std::abs(p.signed_distance(pts[i])) <= 0.05);
    }
}
