#include "fsplat/gravity.hpp"

#include "fsplat/decompose.hpp"
#include "fsplat/error.hpp"

#include <algorithm>

namespace fsplat::geom {

FloorEstimate estimate_floor(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                             const GravityConfig &cfg) {
    std::vector<std::size_t> chosen;
    for (const auto &word : cfg.synonyms) {
        if (!vocab.count(word)) continue;
        decompose::QuerySpec q;
        q.positive = word;
        q.tau = cfg.tau;
        q.temperature = cfg.temperature;
        std::erase_if(q.negatives, [&](const std::string &w) { return !vocab.count(w); });
        if (q.negatives.empty()) continue;
        const auto sel = decompose::segment(scene, head, vocab, q);
        chosen.insert(chosen.end(), sel.indices.begin(), sel.indices.end());
    }
    std::sort(chosen.begin(), chosen.end());
    chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
    require(chosen.size() >= 3, ErrorCode::EmptySelection,
            "no floor found (" + std::to_string(chosen.size()) +
                " Gaussians matched); pass a gravity vector explicitly, e.g. --gravity 0,0,-1");

    std::vector<Vec3> pts;
    pts.reserve(chosen.size());
    for (auto i : chosen) pts.push_back(scene.centroids[i]);
    RansacConfig rc = cfg.ransac;
    if (!(rc.inlier_tol > 0.0)) {
        const auto [lo, hi] = scene.bounds();
        rc.inlier_tol = std::max(0.01 * (hi - lo).norm(), 1e-9);
    }
    FloorEstimate out;
    out.plane = ransac_plane(pts, rc);
    out.selected = chosen.size();

    Vec3 mean = Vec3::Zero();
    for (const auto &c : scene.centroids) mean += c;
    mean /= double(scene.size());
    if (out.plane.signed_distance(mean) < 0.0) {
        out.plane.normal = -out.plane.normal;
        out.plane.offset = -out.plane.offset;
    }
    out.gravity = -out.plane.normal;
    return out;
}

} // namespace fsplat::geom
