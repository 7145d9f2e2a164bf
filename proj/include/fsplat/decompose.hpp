#pragma once

#include "fsplat/camera.hpp"
#include "fsplat/dataset.hpp"
#include "fsplat/distill.hpp"
#include "fsplat/image.hpp"
#include "fsplat/scene.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace fsplat::decompose {

struct QuerySpec {
    std::string positive;
    std::vector<std::string> negatives{"objects", "things"};
    double tau = 0.6;
    double temperature = 0.1;

    /// Throws Error(Contract) unless tau is in (0,1), temperature > 0 and there is a negative.
    void validate() const;
};

struct SegmentSelection {
    std::vector<std::size_t> indices; // ascending
    std::vector<double> scores;       // parallel to indices

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
    bool contains(std::size_t i) const;
    bool operator==(const SegmentSelection &) const = default;
};

/// Looks up a word; throws Error(UnknownVocabulary) naming it when absent.
const Eigen::VectorXd &embedding(const Vocabulary &vocab, const std::string &word);

/// Per-Gaussian CLIP features through the decode head's CLIP branch, one column per Gaussian.
Eigen::MatrixXd decode_features(const GaussianScene &scene, const distill::DecodeHead &head);

/// p(positive) per column of `decoded`: softmax over the cosine similarities to
/// [positive, negatives...] divided by the temperature. A zero feature has similarity 0 to all.
std::vector<double> positive_probability(const Eigen::MatrixXd &decoded, const Vocabulary &vocab,
                                         const QuerySpec &q);

/// Selects columns with p(positive) > tau.
SegmentSelection select(const std::vector<double> &probability, double tau);

SegmentSelection segment(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                         const QuerySpec &q);

/// Adds every unselected Gaussian whose k nearest other centroids are more than `majority`
/// selected. One pass against the input selection. Added entries score the mean of their
/// selected neighbours' scores.
SegmentSelection knn_close(const GaussianScene &scene, const SegmentSelection &sel, int k = 8,
                           double majority = 0.5);

/// Four times the median nearest-neighbour distance among the selected centroids (0 if < 2).
double default_eps(const GaussianScene &scene, const SegmentSelection &sel);

/// DBSCAN over the selected centroids; keeps the largest cluster (ties: lowest cluster id).
SegmentSelection dbscan_open(const GaussianScene &scene, const SegmentSelection &sel, double eps, int min_pts = 10);

/// Removes from `sel` everything that a query with each extra negative as positive selects.
SegmentSelection subtract_negatives(const GaussianScene &scene, const distill::DecodeHead &head,
                                    const Vocabulary &vocab, const SegmentSelection &sel,
                                    const std::vector<std::string> &extra_negatives, const QuerySpec &q);

struct PostprocessConfig {
    bool enabled = true;
    int knn_k = 8;
    double majority = 0.5;
    double eps = 0.0; // <= 0: default_eps of the closed selection
    int min_pts = 10;
    std::vector<std::string> extra_negatives;
};

/// segment -> knn_close -> dbscan_open -> subtract_negatives.
SegmentSelection query(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                       const QuerySpec &q, const PostprocessConfig &post = {});

/// Per-Gaussian weights splatted as one channel: sum over Gaussians of w_i alpha_i T_i.
ImageF render_weights(const GaussianScene &scene, std::span<const double> weight, const Camera &cam);

/// Colour render tinted red by render_weights (weights clamped to [0,1], times `strength`).
ImageF overlay(const GaussianScene &scene, std::span<const double> weight, const Camera &cam, double strength = 0.7);

/// 1 on the selected indices, 0 elsewhere.
std::vector<double> selection_weights(std::size_t count, const SegmentSelection &sel);

} // namespace fsplat::decompose
