#pragma once

#include "fsplat/dataset.hpp"
#include "fsplat/distill.hpp"
#include "fsplat/geom.hpp"
#include "fsplat/scene.hpp"

#include <string>
#include <vector>

namespace fsplat::geom {

struct GravityConfig {
    std::vector<std::string> synonyms{"floor", "tabletop"}; // words missing from the vocabulary are skipped
    double tau = 0.6;
    double temperature = 0.1;
    RansacConfig ransac{1000, 0.0, 0}; // inlier_tol <= 0: 1% of the scene bounding-box diagonal
};

struct FloorEstimate {
    Plane plane;       // oriented so the scene centroid lies on the positive side
    Vec3 gravity;      // unit, = -plane.normal
    std::size_t selected = 0;
};

/// Queries the planar synonyms, fits a RANSAC plane to the selected centroids and points gravity
/// from the scene centroid toward it. Throws Error(EmptySelection) when fewer than 3 Gaussians
/// match, asking for a manual gravity vector instead.
FloorEstimate estimate_floor(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                             const GravityConfig &cfg = {});

inline Vec3 estimate_gravity(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                             const GravityConfig &cfg = {}) {
    return estimate_floor(scene, head, vocab, cfg).gravity;
}

} // namespace fsplat::geom
