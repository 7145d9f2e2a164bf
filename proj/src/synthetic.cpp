#include "fsplat/synthetic.hpp"

#include "fsplat/error.hpp"
#include "fsplat/rasterizer.hpp"
#include "fsplat/sh.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace fsplat::synthetic {

std::vector<ObjectSpec> SyntheticConfig::default_objects() {
    return {
        {"vase", Shape::Sphere, Vec3(-0.5, 0.1, 0.32), 0.3, Vec3(0.85, 0.2, 0.15)},
        {"box", Shape::Box, Vec3(0.5, -0.1, 0.26), 0.25, Vec3(0.2, 0.35, 0.85)},
        {"floor", Shape::Floor, Vec3(0.0, 0.0, 0.0), 1.2, Vec3(0.75, 0.7, 0.6)},
    };
}

const std::vector<std::string> &filler_words() {
    static const std::vector<std::string> words{"objects", "things", "chair", "table", "ceramic", "flower"};
    return words;
}

namespace {

/// Rotation whose third column is `n`.
Quat frame_quat(const Vec3 &n) {
    const Vec3 a = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 t1 = a.cross(n).normalized();
    const Vec3 t2 = n.cross(t1);
    Mat3 r;
    r.col(0) = t1;
    r.col(1) = t2;
    r.col(2) = n;
    return matrix_to_quat(r);
}

struct Surfel {
    Vec3 p, n;
};

std::vector<Surfel> sample_surface(const ObjectSpec &obj, double spacing) {
    std::vector<Surfel> out;
    const double s = obj.size;
    switch (obj.shape) {
    case Shape::Sphere: {
        const int n = std::max(8, int(std::ceil(4.0 * std::numbers::pi * s * s / (spacing * spacing))));
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i) {
            const double z = 1.0 - 2.0 * (i + 0.5) / n;
            const double r = std::sqrt(1.0 - z * z);
            const Vec3 d(r * std::cos(golden * i), r * std::sin(golden * i), z);
            out.push_back({obj.center + s * d, d});
        }
        break;
    }
    case Shape::Box: {
        const int m = std::max(2, int(std::ceil(2.0 * s / spacing)));
        for (int axis = 0; axis < 3; ++axis)
            for (int sign = -1; sign <= 1; sign += 2) {
                Vec3 n = Vec3::Zero();
                n[axis] = sign;
                const int u = (axis + 1) % 3, v = (axis + 2) % 3;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < m; ++j) {
                        Vec3 p = obj.center + s * n;
                        p[u] += -s + (i + 0.5) * 2.0 * s / m;
                        p[v] += -s + (j + 0.5) * 2.0 * s / m;
                        out.push_back({p, n});
                    }
            }
        break;
    }
    case Shape::Floor: {
        const int m = std::max(2, int(std::ceil(2.0 * s / spacing)));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                const Vec3 p = obj.center + Vec3(-s + (i + 0.5) * 2.0 * s / m, -s + (j + 0.5) * 2.0 * s / m, 0.0);
                out.push_back({p, Vec3::UnitZ()});
            }
        break;
    }
    }
    return out;
}

FeatureMapD blend(const raster::RenderTarget &t, const std::vector<Eigen::VectorXd> &words, int dim) {
    FeatureMapD m;
    m.height = t.height;
    m.width = t.width;
    m.dim = dim;
    m.data.assign(std::size_t(t.height) * t.width * dim, 0.0);
    const int K = t.feature_dim;
    for (std::size_t p = 0; p < std::size_t(t.height) * t.width; ++p) {
        Eigen::Map<Eigen::VectorXd> out(m.data.data() + p * dim, dim);
        for (int k = 0; k < K; ++k) out += t.feature[p * K + k] * words[k];
    }
    return m;
}

FeatureMap coarse(const FeatureMapD &full, int downsample, double noise, std::mt19937_64 &rng) {
    FeatureMapD low = resize_bilinear(full, std::max(1, full.height / downsample), std::max(1, full.width / downsample));
    if (noise > 0.0) {
        std::normal_distribution<double> n(0.0, noise);
        for (auto &v : low.data) v += n(rng);
    }
    return to_half(low);
}

} // namespace

std::vector<double> visibility(const GaussianScene &scene, const Camera &cam) {
    raster::RasterConfig cfg;
    cfg.render_features = false;
    const auto t = raster::rasterize(scene, cam, cfg);
    // d(sum of red)/d(DC red) = basis_0 * sum_p w_i(p), unless the colour is clamped.
    std::vector<double> dC(t.color.size(), 0.0);
    for (std::size_t p = 0; p < dC.size(); p += 3) dC[p] = 1.0;
    const auto g = raster::rasterize_backward(scene, cam, t, dC, {}, cfg);
    const double b0 = sh::basis(Vec3::UnitZ(), 0)[0];
    std::vector<double> w(scene.size());
    const int K3 = scene.sh_count() * 3;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = g.sh[i * K3] / b0;
    return w;
}

void add_object(GaussianScene &out, const ObjectSpec &obj, double spacing, int label, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double check = 0.3;
    for (const Surfel &s : sample_surface(obj, spacing)) {
        Gaussian g;
        g.centroid = s.p;
        g.log_scale = Vec3(std::log(0.6 * spacing), std::log(0.6 * spacing), std::log(0.1 * spacing));
        g.rotation = frame_quat(s.n);
        g.opacity_logit = inverse_sigmoid(0.95);
        Vec3 rgb = obj.color + 0.06 * Vec3(u(rng), u(rng), u(rng));
        if (obj.shape == Shape::Floor) {
            const int parity = int(std::floor(s.p.x() / check) + std::floor(s.p.y() / check)) & 1;
            rgb *= parity ? 0.8 : 1.1;
        }
        rgb = rgb.cwiseMax(0.0).cwiseMin(1.0);
        g.sh.assign(out.sh_count(), Vec3::Zero());
        g.sh[0] = sh::rgb_to_dc(rgb);
        g.feature.assign(out.feature_dim(), Half(0.0f));
        if (label >= 0 && label < out.feature_dim()) g.feature[label] = Half(1.0f);
        out.push_back(g);
    }
}

std::vector<Camera> orbit_cameras(int count, int width, int height, double focal, double radius) {
    std::vector<Camera> cams;
    const Vec3 target(0.0, 0.0, 0.2);
    for (int i = 0; i < count; ++i) {
        const double az = 2.0 * std::numbers::pi * i / count + 0.3;
        const double el = (i % 2 ? 45.0 : 25.0) * std::numbers::pi / 180.0;
        const Vec3 eye = target + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        cams.push_back(Camera::look_at(eye, target, Vec3::UnitZ(), focal, focal, width, height));
    }
    return cams;
}

BinaryMask object_mask(const GaussianScene &ground_truth, const Camera &cam, int label) {
    require(label >= 0 && label < ground_truth.feature_dim(), ErrorCode::Contract, "label out of range");
    const auto t = raster::rasterize(ground_truth, cam);
    BinaryMask m(t.height, t.width);
    const int K = t.feature_dim;
    for (std::size_t p = 0; p < m.bits.size(); ++p) m.bits[p] = t.feature[p * K + label] > 0.5 ? 1 : 0;
    return m;
}

SyntheticScene make_scene(const SyntheticConfig &cfg) {
    const int K = int(cfg.objects.size());
    require(K > 0, ErrorCode::Contract, "synthetic scene needs objects");
    require(K + int(filler_words().size()) <= cfg.clip_dim, ErrorCode::Contract,
            "clip_dim too small for the synthetic vocabulary");
    require(cfg.views >= 2 && cfg.holdout >= 0 && cfg.holdout < cfg.views, ErrorCode::Contract,
            "bad synthetic view counts");
    std::mt19937_64 rng(cfg.seed);

    SyntheticScene out;
    std::vector<Eigen::VectorXd> clip_words, dino_words;
    int slot = 0;
    auto word = [&](const std::string &name) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(cfg.clip_dim);
        e[slot++] = 1.0;
        out.dataset.vocab[name] = e;
        return e;
    };
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto &obj : cfg.objects) {
        out.object_names.push_back(obj.name);
        clip_words.push_back(word(obj.name));
        Eigen::VectorXd d(cfg.dino_dim);
        for (auto &v : d) v = normal(rng);
        dino_words.push_back(d.normalized());
    }
    for (const auto &w : filler_words()) word(w);
    // Image-side embeddings share a generic component with the catch-all words, as real
    // image features of any object resemble "objects" and "things" somewhat.
    const Eigen::VectorXd generic = out.dataset.vocab.at("objects") + out.dataset.vocab.at("things");
    for (auto &w : clip_words) w = (w + cfg.generic_weight * generic).normalized();

    out.ground_truth = GaussianScene(0, K);
    for (int k = 0; k < K; ++k) {
        const std::size_t before = out.ground_truth.size();
        add_object(out.ground_truth, cfg.objects[k], cfg.spacing, k, cfg.seed * 1000 + 17 * std::uint64_t(k) + 1);
        out.ground_truth_labels.insert(out.ground_truth_labels.end(), out.ground_truth.size() - before, k);
    }

    const auto cams = orbit_cameras(cfg.views, cfg.width, cfg.height, cfg.focal, cfg.orbit_radius);
    for (const Camera &cam : cams) {
        const auto t = raster::rasterize(out.ground_truth, cam);
        DatasetView v;
        v.camera = cam;
        v.rgb = Image8(cfg.width, cfg.height, 3);
        for (std::size_t i = 0; i < t.color.size(); ++i)
            v.rgb.data[i] = std::uint8_t(std::lround(std::clamp(t.color[i], 0.0, 1.0) * 255.0));
        v.clip = coarse(blend(t, clip_words, cfg.clip_dim), cfg.clip_downsample, cfg.clip_noise, rng);
        v.dino = coarse(blend(t, dino_words, cfg.dino_dim), cfg.dino_downsample, cfg.dino_noise, rng);
        for (int k = 0; k < K; ++k) {
            BinaryMask m(t.height, t.width);
            for (std::size_t p = 0; p < m.bits.size(); ++p) m.bits[p] = t.feature[p * K + k] > 0.5 ? 1 : 0;
            if (m.count() > 0) v.masks.push_back(std::move(m));
        }
        out.dataset.views.push_back(std::move(v));
    }
    for (int i = cfg.views - cfg.holdout; i < cfg.views; ++i) out.dataset.holdout.push_back(i);

    // Like a structure-from-motion cloud, the starting points are the surface samples that at
    // least two training views actually see.
    std::vector<int> seen(out.ground_truth.size(), 0);
    for (int v : out.dataset.training_views()) {
        const auto w = visibility(out.ground_truth, out.dataset.views[v].camera);
        for (std::size_t i = 0; i < w.size(); ++i) seen[i] += w[i] >= 1.0 ? 1 : 0;
    }
    out.initial = GaussianScene(cfg.sh_degree, cfg.feature_dim);
    std::normal_distribution<double> jitter(0.0, cfg.init_jitter), fnoise(0.0, cfg.init_feature_noise);
    for (std::size_t i = 0; i < out.ground_truth.size(); ++i) {
        if (seen[i] < 2) continue;
        Gaussian g;
        g.centroid = out.ground_truth.centroids[i] + Vec3(jitter(rng), jitter(rng), jitter(rng));
        g.log_scale = Vec3::Constant(std::log(0.5 * cfg.spacing));
        g.opacity_logit = inverse_sigmoid(0.1);
        g.sh.assign(out.initial.sh_count(), Vec3::Zero());
        g.feature.resize(cfg.feature_dim);
        for (auto &f : g.feature) f = Half(float(fnoise(rng)));
        out.initial.push_back(g);
        out.initial_labels.push_back(out.ground_truth_labels[i]);
    }
    out.initial.metadata.scene_scale = 1.0;
    return out;
}

} // namespace fsplat::synthetic
