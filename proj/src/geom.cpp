#include "fsplat/geom.hpp"

#include "fsplat/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>

namespace fsplat::geom {

namespace {
constexpr std::uint32_t kLeafSize = 8;

struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate &o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};
} // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()), 0);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (auto i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] - lo[axis] <= 0.0) return id; // all coincident

    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid, depth + 1);
    const auto right = build(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<std::size_t> KdTree::knn(const Vec3 &query, std::size_t k) const {
    k = std::min(k, points_.size());
    std::vector<std::size_t> out;
    if (k == 0) return out;
    std::priority_queue<Candidate> heap; // max-heap on (d2, index)

    auto visit = [&](auto &&self, std::int32_t id) -> void {
        const Node &n = nodes_[id];
        if (n.axis < 0) {
            for (auto i = n.begin; i < n.end; ++i) {
                const Candidate c{(points_[order_[i]] - query).squaredNorm(), order_[i]};
                if (heap.size() < k) {
                    heap.push(c);
                } else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        const double diff = query[n.axis] - n.split;
        const auto near = diff < 0.0 ? n.left : n.right;
        const auto far = diff < 0.0 ? n.right : n.left;
        self(self, near);
        if (heap.size() < k || diff * diff <= heap.top().d2) self(self, far);
    };
    visit(visit, 0);

    out.resize(heap.size());
    for (auto i = out.size(); i-- > 0;) {
        out[i] = heap.top().index;
        heap.pop();
    }
    return out;
}

std::vector<std::size_t> KdTree::radius_search(const Vec3 &query, double radius) const {
    std::vector<std::size_t> out;
    if (points_.empty()) return out;
    const double r2 = radius * radius;
    auto visit = [&](auto &&self, std::int32_t id) -> void {
        const Node &n = nodes_[id];
        if (n.axis < 0) {
            for (auto i = n.begin; i < n.end; ++i)
                if ((points_[order_[i]] - query).squaredNorm() <= r2) out.push_back(order_[i]);
            return;
        }
        const double diff = query[n.axis] - n.split;
        if (diff <= radius) self(self, n.left);
        if (diff >= -radius) self(self, n.right);
    };
    visit(visit, 0);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> kd_knn(std::span<const Vec3> points, const Vec3 &query, std::size_t k) {
    return KdTree({points.begin(), points.end()}).knn(query, k);
}

std::vector<int> dbscan(std::span<const Vec3> points, double eps, int min_pts) {
    require(eps > 0.0, ErrorCode::Contract, "dbscan eps must be positive");
    const KdTree tree({points.begin(), points.end()});
    constexpr int kUnvisited = -2;
    std::vector<int> labels(points.size(), kUnvisited);
    int cluster = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (labels[i] != kUnvisited) continue;
        auto seeds = tree.radius_search(points[i], eps);
        if (int(seeds.size()) < min_pts) {
            labels[i] = kNoise;
            continue;
        }
        labels[i] = cluster;
        std::vector<std::size_t> frontier(seeds.begin(), seeds.end());
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            const auto j = frontier[f];
            if (labels[j] == kNoise) labels[j] = cluster; // border point
            if (labels[j] != kUnvisited) continue;
            labels[j] = cluster;
            auto nbrs = tree.radius_search(points[j], eps);
            if (int(nbrs.size()) >= min_pts) frontier.insert(frontier.end(), nbrs.begin(), nbrs.end());
        }
        ++cluster;
    }
    return labels;
}

Plane fit_plane(std::span<const Vec3> points) {
    if (points.size() < 3) fail(ErrorCode::Degenerate, "plane fit needs at least 3 points");
    Vec3 mean = Vec3::Zero();
    for (const auto &p : points) mean += p;
    mean /= double(points.size());
    Mat3 cov = Mat3::Zero();
    for (const auto &p : points) cov += (p - mean) * (p - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    // Collinear: two vanishing eigenvalues relative to the spread.
    if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300)) fail(ErrorCode::Degenerate, "points are collinear");
    Plane plane;
    plane.normal = eig.eigenvectors().col(0).normalized();
    plane.offset = plane.normal.dot(mean);
    plane.inlier_count = points.size();
    return plane;
}

std::vector<std::size_t> plane_inliers(std::span<const Vec3> points, const Plane &plane, double tol) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (std::abs(plane.signed_distance(points[i])) <= tol) out.push_back(i);
    return out;
}

Plane ransac_plane(std::span<const Vec3> points, const RansacConfig &cfg) {
    const std::size_t n = points.size();
    if (n < 3) fail(ErrorCode::Degenerate, "RANSAC needs at least 3 points");
    // Rejects all-collinear input up front.
    (void)fit_plane(points);

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t best_count = 0;
    Plane best;
    bool found = false;
    for (int it = 0; it < cfg.iterations; ++it) {
        const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
        if (a == b || b == c || a == c) continue;
        const Vec3 nrm = (points[b] - points[a]).cross(points[c] - points[a]);
        const double len = nrm.norm();
        if (len <= 1e-12 * (points[b] - points[a]).squaredNorm()) continue;
        Plane h;
        h.normal = nrm / len;
        h.offset = h.normal.dot(points[a]);
        std::size_t count = 0;
        for (const auto &p : points)
            if (std::abs(h.signed_distance(p)) <= cfg.inlier_tol) ++count;
        if (count > best_count) {
            best_count = count;
            best = h;
            found = true;
        }
    }
    if (!found) {
        // Every sample was degenerate (tiny n); fall back to the global fit.
        best = fit_plane(points);
    }

    // The consensus band admits tilted planes, so the least-squares refit sets the accuracy. It is
    // kept even when it sheds a few stragglers, and repeated until the inlier set settles.
    auto inliers = plane_inliers(points, best, cfg.inlier_tol);
    for (int round = 0; round < 10 && inliers.size() >= 3; ++round) {
        std::vector<Vec3> pts;
        for (auto i : inliers) pts.push_back(points[i]);
        Plane refit;
        try {
            refit = fit_plane(pts);
        } catch (const Error &) {
            break; // keep the hypothesis plane
        }
        auto next = plane_inliers(points, refit, cfg.inlier_tol);
        if (next.size() < 3) break;
        best = refit;
        if (next == inliers) break;
        inliers = std::move(next);
    }
    best.inlier_count = inliers.size();
    return best;
}

} // namespace fsplat::geom
