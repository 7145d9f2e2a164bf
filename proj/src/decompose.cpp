#include "fsplat/decompose.hpp"

#include "fsplat/error.hpp"
#include "fsplat/geom.hpp"
#include "fsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fsplat::decompose {

void QuerySpec::validate() const {
    require(tau > 0.0 && tau < 1.0, ErrorCode::Contract, "tau must lie in (0,1)");
    require(temperature > 0.0, ErrorCode::Contract, "temperature must be positive");
    require(!negatives.empty(), ErrorCode::Contract, "a query needs at least one negative");
}

bool SegmentSelection::contains(std::size_t i) const {
    return std::binary_search(indices.begin(), indices.end(), i);
}

const Eigen::VectorXd &embedding(const Vocabulary &vocab, const std::string &word) {
    const auto it = vocab.find(word);
    if (it == vocab.end()) fail(ErrorCode::UnknownVocabulary, "unknown vocabulary word: " + word);
    return it->second;
}

Eigen::MatrixXd decode_features(const GaussianScene &scene, const distill::DecodeHead &head) {
    const int d = scene.feature_dim();
    Eigen::MatrixXd X(d, scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i)
        for (int j = 0; j < d; ++j) X(j, Eigen::Index(i)) = double(float(scene.features[i * d + j]));
    Eigen::MatrixXd clip, dino;
    head.forward(X, clip, dino);
    return clip;
}

std::vector<double> positive_probability(const Eigen::MatrixXd &decoded, const Vocabulary &vocab,
                                         const QuerySpec &q) {
    q.validate();
    std::vector<Eigen::VectorXd> words;
    words.push_back(embedding(vocab, q.positive).normalized());
    for (const auto &n : q.negatives) words.push_back(embedding(vocab, n).normalized());
    for (const auto &w : words)
        require(w.size() == decoded.rows(), ErrorCode::Contract, "embedding dimension does not match the features");

    std::vector<double> p(decoded.cols());
    std::vector<double> logits(words.size());
    for (Eigen::Index i = 0; i < decoded.cols(); ++i) {
        const double norm = decoded.col(i).norm();
        for (std::size_t k = 0; k < words.size(); ++k)
            logits[k] = norm > 0.0 ? words[k].dot(decoded.col(i)) / norm / q.temperature : 0.0;
        const double top = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - top);
        p[i] = std::exp(logits[0] - top) / z;
    }
    return p;
}

SegmentSelection select(const std::vector<double> &probability, double tau) {
    SegmentSelection s;
    for (std::size_t i = 0; i < probability.size(); ++i)
        if (probability[i] > tau) {
            s.indices.push_back(i);
            s.scores.push_back(probability[i]);
        }
    return s;
}

SegmentSelection segment(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                         const QuerySpec &q) {
    return select(positive_probability(decode_features(scene, head), vocab, q), q.tau);
}

SegmentSelection knn_close(const GaussianScene &scene, const SegmentSelection &sel, int k, double majority) {
    if (sel.empty()) return sel;
    require(k > 0 && std::size_t(k) < scene.size(), ErrorCode::Contract, "knn_close needs 0 < k < scene size");
    std::vector<double> score(scene.size(), -1.0);
    for (std::size_t j = 0; j < sel.size(); ++j) score[sel.indices[j]] = sel.scores[j];
    const geom::KdTree tree(scene.centroids);

    SegmentSelection out;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (score[i] >= 0.0) {
            out.indices.push_back(i);
            out.scores.push_back(score[i]);
            continue;
        }
        auto nn = tree.knn(scene.centroids[i], std::size_t(k) + 1);
        const auto self = std::find(nn.begin(), nn.end(), i);
        if (self != nn.end())
            nn.erase(self);
        else
            nn.pop_back();
        int hits = 0;
        double sum = 0.0;
        for (auto j : nn)
            if (score[j] >= 0.0) {
                ++hits;
                sum += score[j];
            }
        if (double(hits) > majority * double(nn.size())) {
            out.indices.push_back(i);
            out.scores.push_back(sum / hits);
        }
    }
    return out;
}

double default_eps(const GaussianScene &scene, const SegmentSelection &sel) {
    if (sel.size() < 2) return 0.0;
    std::vector<Vec3> pts;
    for (auto i : sel.indices) pts.push_back(scene.centroids[i]);
    const geom::KdTree tree(pts);
    std::vector<double> d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto nn = tree.knn(pts[i], 2);
        const std::size_t j = nn[0] == i ? nn[1] : nn[0];
        d.push_back((pts[i] - pts[j]).norm());
    }
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return 4.0 * d[d.size() / 2];
}

SegmentSelection dbscan_open(const GaussianScene &scene, const SegmentSelection &sel, double eps, int min_pts) {
    require(eps > 0.0, ErrorCode::Contract, "dbscan eps must be positive");
    if (sel.empty()) return sel;
    std::vector<Vec3> pts;
    for (auto i : sel.indices) pts.push_back(scene.centroids[i]);
    const auto labels = geom::dbscan(pts, eps, min_pts);
    std::map<int, std::size_t> counts;
    for (int l : labels)
        if (l != geom::kNoise) ++counts[l];
    SegmentSelection out;
    if (counts.empty()) return out;
    int best = counts.begin()->first;
    for (const auto &[l, c] : counts)
        if (c > counts[best]) best = l;
    for (std::size_t j = 0; j < sel.size(); ++j)
        if (labels[j] == best) {
            out.indices.push_back(sel.indices[j]);
            out.scores.push_back(sel.scores[j]);
        }
    return out;
}

SegmentSelection subtract_negatives(const GaussianScene &scene, const distill::DecodeHead &head,
                                    const Vocabulary &vocab, const SegmentSelection &sel,
                                    const std::vector<std::string> &extra_negatives, const QuerySpec &q) {
    if (extra_negatives.empty()) return sel;
    const Eigen::MatrixXd decoded = decode_features(scene, head);
    std::vector<std::uint8_t> drop(scene.size(), 0);
    for (const auto &neg : extra_negatives) {
        QuerySpec nq = q;
        nq.positive = neg;
        for (auto i : select(positive_probability(decoded, vocab, nq), q.tau).indices) drop[i] = 1;
    }
    SegmentSelection out;
    for (std::size_t j = 0; j < sel.size(); ++j)
        if (!drop[sel.indices[j]]) {
            out.indices.push_back(sel.indices[j]);
            out.scores.push_back(sel.scores[j]);
        }
    return out;
}

SegmentSelection query(const GaussianScene &scene, const distill::DecodeHead &head, const Vocabulary &vocab,
                       const QuerySpec &q, const PostprocessConfig &post) {
    SegmentSelection sel = segment(scene, head, vocab, q);
    if (!post.enabled) return subtract_negatives(scene, head, vocab, sel, post.extra_negatives, q);
    if (!sel.empty() && std::size_t(post.knn_k) < scene.size()) sel = knn_close(scene, sel, post.knn_k, post.majority);
    const double eps = post.eps > 0.0 ? post.eps : default_eps(scene, sel);
    if (eps > 0.0) sel = dbscan_open(scene, sel, eps, post.min_pts);
    return subtract_negatives(scene, head, vocab, sel, post.extra_negatives, q);
}

namespace {

raster::RenderTarget splat_weights(const GaussianScene &scene, std::span<const double> weight, const Camera &cam) {
    require(weight.size() == scene.size(), ErrorCode::Contract, "one weight per Gaussian");
    GaussianScene s(scene.sh_degree(), 1);
    s.centroids = scene.centroids;
    s.log_scales = scene.log_scales;
    s.rotations = scene.rotations;
    s.opacity_logits = scene.opacity_logits;
    s.sh = scene.sh;
    s.features.assign(scene.size(), Half(0.0f));
    const std::vector<float> w(weight.begin(), weight.end());
    return raster::rasterize(s, w, cam);
}

} // namespace

ImageF render_weights(const GaussianScene &scene, std::span<const double> weight, const Camera &cam) {
    const auto t = splat_weights(scene, weight, cam);
    ImageF g(t.width, t.height, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = t.feature[i];
    return g;
}

ImageF overlay(const GaussianScene &scene, std::span<const double> weight, const Camera &cam, double strength) {
    const auto t = splat_weights(scene, weight, cam);
    ImageF img = t.color_image();
    const std::size_t npix = std::size_t(t.width) * t.height;
    for (std::size_t i = 0; i < npix; ++i) {
        const double h = std::clamp(t.feature[i], 0.0, 1.0) * strength;
        img.data[3 * i] = (1.0 - h) * img.data[3 * i] + h;
        img.data[3 * i + 1] *= 1.0 - h;
        img.data[3 * i + 2] *= 1.0 - h;
    }
    return img;
}

std::vector<double> selection_weights(std::size_t count, const SegmentSelection &sel) {
    std::vector<double> w(count, 0.0);
    for (auto i : sel.indices) {
        require(i < count, ErrorCode::Contract, "selection index out of range");
        w[i] = 1.0;
    }
    return w;
}

} // namespace fsplat::decompose
