#include "fsplat/scene.hpp"

#include "fsplat/binary.hpp"
#include "fsplat/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>

namespace fsplat {

Activation activate(const Vec3 &log_scale, const Quat &rotation, double opacity_logit) {
    Activation a;
    a.scale = log_scale.array().exp().matrix();
    a.rotation = quat_to_matrix(rotation);
    a.opacity = sigmoid(opacity_logit);
    const Mat3 m = a.rotation * a.scale.asDiagonal();
    a.covariance = m * m.transpose();
    a.covariance = 0.5 * (a.covariance + a.covariance.transpose()).eval();
    return a;
}

Activation activate(const Gaussian &g) { return activate(g.log_scale, g.rotation, g.opacity_logit); }

GaussianScene::GaussianScene(int sh_degree, int feature_dim) : sh_degree_(sh_degree), feature_dim_(feature_dim) {
    require(sh_degree >= 0 && sh_degree <= 3, ErrorCode::Contract, "sh_degree must be in [0, 3]");
    require(feature_dim >= 0, ErrorCode::Contract, "feature_dim must be non-negative");
}

void GaussianScene::reserve(std::size_t n) {
    centroids.reserve(n);
    log_scales.reserve(n);
    rotations.reserve(n);
    opacity_logits.reserve(n);
    sh.reserve(n * sh_count() * 3);
    features.reserve(n * feature_dim_);
}

void GaussianScene::clear() {
    centroids.clear();
    log_scales.clear();
    rotations.clear();
    opacity_logits.clear();
    sh.clear();
    features.clear();
}

void GaussianScene::push_back(const Gaussian &g) {
    require(g.sh.size() <= std::size_t(sh_count()), ErrorCode::Contract, "too many SH coefficients");
    require(g.feature.size() <= std::size_t(feature_dim_), ErrorCode::Contract, "feature longer than feature_dim");
    centroids.push_back(g.centroid);
    log_scales.push_back(g.log_scale);
    rotations.push_back(g.rotation);
    opacity_logits.push_back(g.opacity_logit);
    for (int k = 0; k < sh_count(); ++k) {
        const Vec3 c = k < int(g.sh.size()) ? g.sh[k] : Vec3::Zero();
        sh.insert(sh.end(), {c[0], c[1], c[2]});
    }
    for (int j = 0; j < feature_dim_; ++j) features.push_back(j < int(g.feature.size()) ? g.feature[j] : Half(0.0f));
}

Gaussian GaussianScene::gaussian(std::size_t i) const {
    Gaussian g;
    g.centroid = centroids[i];
    g.log_scale = log_scales[i];
    g.rotation = rotations[i];
    g.opacity_logit = opacity_logits[i];
    const auto s = sh_of(i);
    for (int k = 0; k < sh_count(); ++k) g.sh.emplace_back(s[3 * k], s[3 * k + 1], s[3 * k + 2]);
    const auto f = feature_of(i);
    g.feature.assign(f.begin(), f.end());
    return g;
}

void GaussianScene::append_from(const GaussianScene &other, std::size_t i) {
    require(other.sh_degree_ == sh_degree_ && other.feature_dim_ == feature_dim_, ErrorCode::Contract,
            "scene layouts differ");
    centroids.push_back(other.centroids[i]);
    log_scales.push_back(other.log_scales[i]);
    rotations.push_back(other.rotations[i]);
    opacity_logits.push_back(other.opacity_logits[i]);
    const auto s = other.sh_of(i);
    sh.insert(sh.end(), s.begin(), s.end());
    const auto f = other.feature_of(i);
    features.insert(features.end(), f.begin(), f.end());
}

GaussianScene GaussianScene::subset(std::span<const std::size_t> keep) const {
    GaussianScene out(sh_degree_, feature_dim_);
    out.metadata = metadata;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.append_from(*this, i);
    return out;
}

void GaussianScene::validate() const {
    const std::size_t n = size();
    require(log_scales.size() == n && rotations.size() == n && opacity_logits.size() == n &&
                sh.size() == n * sh_count() * 3 && features.size() == n * feature_dim_,
            ErrorCode::Contract, "scene attribute arrays have inconsistent lengths");
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < n; ++i) {
        bool ok = centroids[i].allFinite() && log_scales[i].allFinite() && rotations[i].allFinite() &&
                  !std::isnan(opacity_logits[i]);
        for (double v : sh_of(i)) ok = ok && std::isfinite(v);
        for (Half h : feature_of(i)) ok = ok && std::isfinite(float(h));
        if (!ok) bad.push_back(i);
    }
    if (!bad.empty()) {
        std::string msg = "non-finite parameters at Gaussian indices:";
        for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 16); ++k) msg += " " + std::to_string(bad[k]);
        if (bad.size() > 16) msg += " ...";
        throw ValidationError(msg, std::move(bad));
    }
}

std::pair<Vec3, Vec3> GaussianScene::bounds() const {
    if (empty()) return {Vec3::Zero(), Vec3::Zero()};
    Vec3 lo = centroids.front(), hi = centroids.front();
    for (const auto &c : centroids) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    return {lo, hi};
}

namespace {

template <typename T>
bool same_bits(const std::vector<T> &a, const std::vector<T> &b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

} // namespace

bool bitwise_equal(const GaussianScene &a, const GaussianScene &b) {
    return a.sh_degree() == b.sh_degree() && a.feature_dim() == b.feature_dim() && same_bits(a.centroids, b.centroids) &&
           same_bits(a.log_scales, b.log_scales) && same_bits(a.rotations, b.rotations) &&
           same_bits(a.opacity_logits, b.opacity_logits) && same_bits(a.sh, b.sh) && same_bits(a.features, b.features) &&
           std::memcmp(&a.metadata.scene_scale, &b.metadata.scene_scale, sizeof(double)) == 0 &&
           a.metadata.units == b.metadata.units;
}

bool GaussianScene::operator==(const GaussianScene &other) const { return bitwise_equal(*this, other); }

// ---------------------------------------------------------------------------------------------
// FSPL encoding

namespace {

using Tag = std::array<char, 4>;

constexpr Tag kCent{'C', 'E', 'N', 'T'};
constexpr Tag kLscl{'L', 'S', 'C', 'L'};
constexpr Tag kRotq{'R', 'O', 'T', 'Q'};
constexpr Tag kOpac{'O', 'P', 'A', 'C'};
constexpr Tag kShcf{'S', 'H', 'C', 'F'};
constexpr Tag kFeat{'F', 'E', 'A', 'T'};

void put_chunk(binary::Writer &w, const Tag &tag, binary::Writer payload) {
    w.put(tag);
    w.put<std::uint64_t>(payload.size());
    w.put_bytes(payload.bytes());
}

template <typename Get>
binary::Writer columns(std::size_t n, int width, Get get) {
    binary::Writer w;
    for (int c = 0; c < width; ++c)
        for (std::size_t i = 0; i < n; ++i) w.put(get(i, c));
    return w;
}

} // namespace

std::vector<std::uint8_t> encode_scene(const GaussianScene &scene) {
    scene.validate();
    const std::size_t n = scene.size();
    binary::Writer w;
    w.put(Tag{'F', 'S', 'P', 'L'});
    w.put<std::uint32_t>(kSceneFileVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.sh_degree()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.feature_dim()));
    w.put<std::uint64_t>(n);
    w.put<double>(scene.metadata.scene_scale);
    w.put_padded(scene.metadata.units, 32);
    if (n == 0) return std::move(w.bytes());

    const int k3 = scene.sh_count() * 3;
    const int d = scene.feature_dim();
    put_chunk(w, kCent, columns(n, 3, [&](std::size_t i, int c) { return scene.centroids[i][c]; }));
    put_chunk(w, kLscl, columns(n, 3, [&](std::size_t i, int c) { return scene.log_scales[i][c]; }));
    put_chunk(w, kRotq, columns(n, 4, [&](std::size_t i, int c) { return scene.rotations[i][c]; }));
    put_chunk(w, kOpac, columns(n, 1, [&](std::size_t i, int) { return scene.opacity_logits[i]; }));
    put_chunk(w, kShcf, columns(n, k3, [&](std::size_t i, int c) { return scene.sh[i * k3 + c]; }));
    put_chunk(w, kFeat, columns(n, d, [&](std::size_t i, int c) { return half_bits(scene.features[i * d + c]); }));
    return std::move(w.bytes());
}

GaussianScene decode_scene(std::span<const std::uint8_t> bytes) {
    binary::Reader r(bytes);
    if (bytes.size() < kSceneHeaderSize) fail(ErrorCode::Format, "scene file shorter than header");
    const auto magic = r.get<Tag>();
    if (magic != Tag{'F', 'S', 'P', 'L'}) fail(ErrorCode::Format, "bad magic; expected FSPL");
    const auto version = r.get<std::uint32_t>();
    if (version != kSceneFileVersion) fail(ErrorCode::Format, "unsupported FSPL version " + std::to_string(version));
    const auto sh_degree = r.get<std::uint32_t>();
    const auto feature_dim = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    if (sh_degree > 3) fail(ErrorCode::Format, "sh_degree out of range");
    if (feature_dim > (1u << 16)) fail(ErrorCode::Format, "feature_dim out of range");

    GaussianScene scene(static_cast<int>(sh_degree), static_cast<int>(feature_dim));
    scene.metadata.scene_scale = r.get<double>();
    scene.metadata.units = r.get_padded(32);
    if (n == 0) return scene;

    const int k3 = scene.sh_count() * 3;
    const int d = scene.feature_dim();
    std::map<Tag, std::span<const std::uint8_t>> chunks;
    while (r.remaining() > 0) {
        const auto tag = r.get<Tag>();
        const auto len = r.get<std::uint64_t>();
        if (len > r.remaining()) fail(ErrorCode::Format, "chunk length exceeds file size");
        chunks[tag] = r.get_bytes(static_cast<std::size_t>(len));
    }
    auto chunk = [&](const Tag &tag, std::size_t elem, std::size_t width) {
        auto it = chunks.find(tag);
        if (it == chunks.end()) fail(ErrorCode::Format, "missing chunk " + std::string(tag.data(), 4));
        if (it->second.size() != elem * width * n)
            fail(ErrorCode::Format, "chunk " + std::string(tag.data(), 4) + " has wrong size");
        return binary::Reader(it->second);
    };

    scene.centroids.resize(n);
    scene.log_scales.resize(n);
    scene.rotations.resize(n);
    scene.opacity_logits.resize(n);
    scene.sh.resize(n * k3);
    scene.features.resize(n * d);

    auto rc = chunk(kCent, 8, 3);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) scene.centroids[i][c] = rc.get<double>();
    auto rl = chunk(kLscl, 8, 3);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) scene.log_scales[i][c] = rl.get<double>();
    auto rq = chunk(kRotq, 8, 4);
    for (int c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < n; ++i) scene.rotations[i][c] = rq.get<double>();
    auto ro = chunk(kOpac, 8, 1);
    for (std::size_t i = 0; i < n; ++i) scene.opacity_logits[i] = ro.get<double>();
    auto rs = chunk(kShcf, 8, k3);
    for (int c = 0; c < k3; ++c)
        for (std::size_t i = 0; i < n; ++i) scene.sh[i * k3 + c] = rs.get<double>();
    auto rf = chunk(kFeat, 2, d);
    for (int c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n; ++i) scene.features[i * d + c] = half_from_bits(rf.get<std::uint16_t>());

    scene.validate();
    return scene;
}

void save_scene(const GaussianScene &scene, const std::filesystem::path &path) {
    binary::write_file(path, encode_scene(scene));
}

GaussianScene load_scene(const std::filesystem::path &path) { return decode_scene(binary::read_file(path)); }

} // namespace fsplat
