#pragma once

#include "fsplat/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fsplat::geom {

/// Exact k-nearest-neighbour index over a fixed point set. Immutable after construction,
/// so concurrent queries are safe. Ties in distance are broken by the smaller index.
class KdTree {
public:
    explicit KdTree(std::vector<Vec3> points);

    /// The k nearest points ordered by (squared distance, index). Returns min(k, size) indices.
    std::vector<std::size_t> knn(const Vec3 &query, std::size_t k) const;

    /// All points with distance <= radius, ascending by index.
    std::vector<std::size_t> radius_search(const Vec3 &query, double radius) const;

    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3> &points() const { return points_; }

private:
    struct Node {
        std::uint32_t begin, end;   // range into order_
        std::int32_t left = -1, right = -1;
        int axis = -1;              // -1 for leaves
        double split = 0.0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

std::vector<std::size_t> kd_knn(std::span<const Vec3> points, const Vec3 &query, std::size_t k);

constexpr int kNoise = -1;

/// Canonical DBSCAN: the eps-neighbourhood includes the point itself; a point is core when its
/// neighbourhood holds at least `min_pts` points. Clusters are numbered 0.. in order of their
/// lowest-index core point; noise is kNoise.
std::vector<int> dbscan(std::span<const Vec3> points, double eps, int min_pts);

/// Plane {x : normal . x = offset} with unit normal.
struct Plane {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;
    std::size_t inlier_count = 0;

    double signed_distance(const Vec3 &x) const { return normal.dot(x) - offset; }
};

/// Least-squares plane through the points: normal is the smallest eigenvector of the covariance.
/// Throws Error(Degenerate) for fewer than 3 points or collinear input.
Plane fit_plane(std::span<const Vec3> points);

struct RansacConfig {
    int iterations = 1000;
    double inlier_tol = 0.01;
    std::uint64_t seed = 0;
};

/// Best 3-point hypothesis by inlier count, refit to its inliers by least squares; the reported
/// inlier set is recomputed against the refit plane, so every inlier is within inlier_tol.
Plane ransac_plane(std::span<const Vec3> points, const RansacConfig &cfg = {});

/// Indices of points within `tol` of the plane.
std::vector<std::size_t> plane_inliers(std::span<const Vec3> points, const Plane &plane, double tol);

} // namespace fsplat::geom
