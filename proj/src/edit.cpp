#include "fsplat/edit.hpp"

#include "fsplat/distill.hpp"
#include "fsplat/error.hpp"

#include <Eigen/Eigenvalues>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <numbers>
#include <thread>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace fsplat::edit {

void check_selection(const GaussianScene &scene, Indices sel) {
    for (std::size_t j = 0; j < sel.size(); ++j) {
        require(sel[j] < scene.size(), ErrorCode::Contract, "selection index out of range");
        require(j == 0 || sel[j - 1] < sel[j], ErrorCode::Contract, "selection must be strictly ascending");
    }
}

Vec3 selection_center(const GaussianScene &scene, Indices sel) {
    if (sel.empty()) return Vec3::Zero();
    Vec3 c = Vec3::Zero();
    for (auto i : sel) c += scene.centroids[i];
    return c / double(sel.size());
}

GaussianScene remove(const GaussianScene &scene, Indices sel) {
    check_selection(scene, sel);
    std::vector<std::size_t> keep;
    keep.reserve(scene.size() - sel.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (j < sel.size() && sel[j] == i) {
            ++j;
            continue;
        }
        keep.push_back(i);
    }
    return scene.subset(keep);
}

GaussianScene translate(const GaussianScene &scene, Indices sel, const Vec3 &b) {
    check_selection(scene, sel);
    GaussianScene out = scene;
    for (auto i : sel) out.centroids[i] += b;
    return out;
}

GaussianScene rotate(const GaussianScene &scene, Indices sel, const Mat3 &r, std::optional<Vec3> pivot) {
    check_selection(scene, sel);
    require((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6 && std::abs(r.determinant() - 1.0) <= 1e-6,
            ErrorCode::Contract, "rotate needs an orthonormal matrix with determinant +1");
    const Vec3 p = pivot.value_or(selection_center(scene, sel));
    const Quat qr = matrix_to_quat(r);
    GaussianScene out = scene;
    for (auto i : sel) {
        out.centroids[i] = r * (scene.centroids[i] - p) + p;
        out.rotations[i] = quat_multiply(qr, scene.rotations[i]);
    }
    return out;
}

Mat3 principal_frame(const GaussianScene &scene, Indices sel) {
    if (sel.size() < 2) return Mat3::Identity();
    const Vec3 c = selection_center(scene, sel);
    Mat3 cov = Mat3::Zero();
    for (auto i : sel) cov += (scene.centroids[i] - c) * (scene.centroids[i] - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Mat3 v = es.eigenvectors();
    if (v.determinant() < 0.0) v.col(0) = -v.col(0);
    return v;
}

GaussianScene scale(const GaussianScene &scene, Indices sel, const Vec3 &s, std::optional<Vec3> pivot,
                    std::optional<Mat3> frame) {
    check_selection(scene, sel);
    require((s.array() > 0.0).all() && s.allFinite(), ErrorCode::Contract, "scale factors must be positive");
    const Vec3 p = pivot.value_or(selection_center(scene, sel));
    GaussianScene out = scene;
    if (s.x() == s.y() && s.y() == s.z()) {
        const double f = s.x(), lf = std::log(f);
        for (auto i : sel) {
            out.centroids[i] = p + f * (scene.centroids[i] - p);
            out.log_scales[i] = scene.log_scales[i].array() + lf;
        }
        return out;
    }
    const Mat3 P = frame.value_or(principal_frame(scene, sel));
    const Mat3 A = P * s.asDiagonal() * P.transpose();
    for (auto i : sel) {
        out.centroids[i] = p + A * (scene.centroids[i] - p);
        const Activation act = activate(scene.log_scales[i], scene.rotations[i], scene.opacity_logits[i]);
        const Mat3 cov = A * act.covariance * A.transpose();
        Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (cov + cov.transpose()));
        Mat3 v = es.eigenvectors();
        if (v.determinant() < 0.0) v.col(0) = -v.col(0);
        const Vec3 lambda = es.eigenvalues().cwiseMax(1e-300);
        out.log_scales[i] = 0.5 * lambda.array().log();
        out.rotations[i] = matrix_to_quat(v);
    }
    return out;
}

GaussianScene clone(const GaussianScene &scene, Indices sel, const Vec3 &offset) {
    check_selection(scene, sel);
    GaussianScene out = scene;
    out.reserve(scene.size() + sel.size());
    for (auto i : sel) {
        out.append_from(scene, i);
        out.centroids.back() += offset;
    }
    return out;
}

Mat3 axis_angle(const Vec3 &axis, double degrees) {
    require(axis.norm() > 0.0, ErrorCode::BadRequest, "rotation axis must be non-zero");
    return Eigen::AngleAxisd(degrees * std::numbers::pi / 180.0, axis.normalized()).toRotationMatrix();
}

// ---------------------------------------------------------------------------------------------
// Scripts

namespace {

Vec3 vec3(const nlohmann::json &j, const char *what) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::BadRequest, std::string(what) + " must be a 3-vector");
    Vec3 v;
    for (int k = 0; k < 3; ++k) {
        if (!j[k].is_number()) fail(ErrorCode::BadRequest, std::string(what) + " must be numeric");
        v[k] = j[k].get<double>();
    }
    if (!v.allFinite()) fail(ErrorCode::BadRequest, std::string(what) + " must be finite");
    return v;
}

nlohmann::json to_json(const Vec3 &v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

} // namespace

EditScript parse_script(const nlohmann::json &j) {
    const nlohmann::json *ops = &j;
    if (j.is_object()) {
        if (!j.contains("ops")) fail(ErrorCode::BadRequest, "edit script needs an \"ops\" array");
        ops = &j.at("ops");
    }
    if (!ops->is_array()) fail(ErrorCode::BadRequest, "edit script ops must be an array");
    EditScript script;
    for (const auto &o : *ops) {
        if (!o.is_object() || !o.contains("op") || !o.at("op").is_string())
            fail(ErrorCode::BadRequest, "each edit op needs a string \"op\"");
        const std::string name = o.at("op").get<std::string>();
        EditOp op;
        if (name == "remove") {
            op.kind = EditOp::Kind::Remove;
        } else if (name == "translate") {
            op.kind = EditOp::Kind::Translate;
            op.vector = vec3(o.value("by", nlohmann::json()), "translate.by");
        } else if (name == "rotate") {
            op.kind = EditOp::Kind::Rotate;
            if (o.contains("matrix")) {
                const auto &m = o.at("matrix");
                if (!m.is_array() || m.size() != 3) fail(ErrorCode::BadRequest, "rotate.matrix must be 3x3");
                for (int r = 0; r < 3; ++r) op.matrix.row(r) = vec3(m[r], "rotate.matrix row").transpose();
            } else {
                if (!o.contains("degrees") || !o.at("degrees").is_number())
                    fail(ErrorCode::BadRequest, "rotate needs \"matrix\" or \"axis\" and \"degrees\"");
                op.matrix = axis_angle(vec3(o.value("axis", nlohmann::json()), "rotate.axis"), o.at("degrees").get<double>());
            }
        } else if (name == "scale") {
            op.kind = EditOp::Kind::Scale;
            const auto f = o.value("factor", nlohmann::json());
            if (f.is_number())
                op.vector = Vec3::Constant(f.get<double>());
            else
                op.vector = vec3(f, "scale.factor");
            if (!(op.vector.array() > 0.0).all()) fail(ErrorCode::BadRequest, "scale.factor must be positive");
        } else if (name == "clone") {
            op.kind = EditOp::Kind::Clone;
            op.vector = o.contains("offset") ? vec3(o.at("offset"), "clone.offset") : Vec3::Zero();
            op.select_clones = o.value("select_clones", false);
        } else {
            fail(ErrorCode::BadRequest, "unknown edit op: " + name);
        }
        if (o.contains("pivot") && !o.at("pivot").is_null()) op.pivot = vec3(o.at("pivot"), "pivot");
        script.ops.push_back(op);
    }
    return script;
}

nlohmann::json to_json(const EditScript &script) {
    nlohmann::json ops = nlohmann::json::array();
    for (const auto &op : script.ops) {
        nlohmann::json o;
        switch (op.kind) {
        case EditOp::Kind::Remove:
            o["op"] = "remove";
            break;
        case EditOp::Kind::Translate:
            o["op"] = "translate";
            o["by"] = to_json(op.vector);
            break;
        case EditOp::Kind::Rotate:
            o["op"] = "rotate";
            o["matrix"] = nlohmann::json::array();
            for (int r = 0; r < 3; ++r) o["matrix"].push_back(to_json(Vec3(op.matrix.row(r).transpose())));
            o["pivot"] = op.pivot ? to_json(*op.pivot) : nlohmann::json();
            break;
        case EditOp::Kind::Scale:
            o["op"] = "scale";
            o["factor"] = to_json(op.vector);
            o["pivot"] = op.pivot ? to_json(*op.pivot) : nlohmann::json();
            break;
        case EditOp::Kind::Clone:
            o["op"] = "clone";
            o["offset"] = to_json(op.vector);
            o["select_clones"] = op.select_clones;
            break;
        }
        ops.push_back(o);
    }
    return {{"ops", ops}};
}

ScriptResult apply_script(const GaussianScene &scene, std::vector<std::size_t> selection, const EditScript &script) {
    check_selection(scene, selection);
    ScriptResult r{scene, std::move(selection)};
    for (const auto &op : script.ops) {
        switch (op.kind) {
        case EditOp::Kind::Remove:
            r.scene = remove(r.scene, r.selection);
            r.selection.clear();
            break;
        case EditOp::Kind::Translate:
            r.scene = translate(r.scene, r.selection, op.vector);
            break;
        case EditOp::Kind::Rotate:
            r.scene = rotate(r.scene, r.selection, op.matrix, op.pivot);
            break;
        case EditOp::Kind::Scale:
            r.scene = scale(r.scene, r.selection, op.vector, op.pivot);
            break;
        case EditOp::Kind::Clone: {
            const std::size_t first = r.scene.size();
            r.scene = clone(r.scene, r.selection, op.vector);
            if (op.select_clones) {
                const std::size_t n = r.selection.size();
                r.selection.resize(n);
                for (std::size_t k = 0; k < n; ++k) r.selection[k] = first + k;
            }
            break;
        }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------------------------
// Providers

TargetColorProvider::TargetColorProvider(Vec3 target, std::vector<std::vector<std::uint8_t>> masks)
    : target_(std::move(target)), masks_(std::move(masks)) {}

LossResult TargetColorProvider::evaluate(const ImageF &image, int view) {
    require(view >= 0 && std::size_t(view) < masks_.size(), ErrorCode::Provider, "no mask for view");
    const auto &mask = masks_[view];
    const std::size_t npix = std::size_t(image.width) * image.height;
    require(mask.size() == npix && image.channels == 3, ErrorCode::Provider, "mask does not match the image");
    LossResult r;
    r.gradient.assign(npix * 3, 0.0);
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) return r;
    const double inv = 1.0 / double(count);
    for (std::size_t p = 0; p < npix; ++p) {
        if (!mask[p]) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = image.data[p * 3 + c] - target_[c];
            r.loss += d * d * inv;
            r.gradient[p * 3 + c] = 2.0 * d * inv;
        }
    }
    return r;
}

namespace {

/// Writes everything, turning a closed pipe into an error instead of SIGPIPE.
void write_all(int fd, const void *data, std::size_t n) {
    sigset_t block, old;
    sigemptyset(&block);
    sigaddset(&block, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &block, &old);
    const auto *p = static_cast<const std::uint8_t *>(data);
    bool ok = true;
    while (n > 0) {
        const ssize_t w = ::write(fd, p, n);
        if (w < 0 && errno == EINTR) continue;
        if (w <= 0) {
            ok = false;
            break;
        }
        p += w;
        n -= std::size_t(w);
    }
    if (!ok) {
        const timespec zero{0, 0};
        sigtimedwait(&block, nullptr, &zero);
    }
    pthread_sigmask(SIG_SETMASK, &old, nullptr);
    if (!ok) fail(ErrorCode::Provider, "loss provider closed its input");
}

void read_all(int fd, void *data, std::size_t n) {
    auto *p = static_cast<std::uint8_t *>(data);
    while (n > 0) {
        const ssize_t r = ::read(fd, p, n);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) fail(ErrorCode::Provider, "loss provider closed its output");
        p += r;
        n -= std::size_t(r);
    }
}

template <typename T>
void put(int fd, T v) {
    write_all(fd, &v, sizeof v);
}
template <typename T>
T get(int fd) {
    T v;
    read_all(fd, &v, sizeof v);
    return v;
}

} // namespace

SubprocessProvider::SubprocessProvider(std::vector<std::string> argv) : argv_(std::move(argv)) {
    require(!argv_.empty(), ErrorCode::Provider, "loss provider command is empty");
    int in[2], out[2];
    if (::pipe(in) != 0) fail(ErrorCode::Provider, "pipe failed");
    if (::pipe(out) != 0) {
        ::close(in[0]);
        ::close(in[1]);
        fail(ErrorCode::Provider, "pipe failed");
    }
    std::vector<char *> args;
    for (auto &a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) {
        for (int fd : {in[0], in[1], out[0], out[1]}) ::close(fd);
        fail(ErrorCode::Provider, "fork failed");
    }
    if (pid == 0) {
        ::dup2(in[0], STDIN_FILENO);
        ::dup2(out[1], STDOUT_FILENO);
        for (int fd : {in[0], in[1], out[0], out[1]}) ::close(fd);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(in[0]);
    ::close(out[1]);
    pid_ = pid;
    to_child_ = in[1];
    from_child_ = out[0];
}

SubprocessProvider::~SubprocessProvider() { shutdown(); }

void SubprocessProvider::shutdown() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        for (int k = 0; k < 100; ++k) {
            if (::waitpid(pid_, &status, WNOHANG) != 0) {
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

LossResult SubprocessProvider::evaluate(const ImageF &image, int view) {
    require(pid_ > 0, ErrorCode::Provider, "loss provider is not running");
    require(image.channels == 3, ErrorCode::Provider, "loss providers take RGB images");
    try {
        write_all(to_child_, "FSLQ", 4);
        put<std::uint32_t>(to_child_, std::uint32_t(view));
        put<std::uint32_t>(to_child_, std::uint32_t(image.width));
        put<std::uint32_t>(to_child_, std::uint32_t(image.height));
        std::vector<float> px(image.data.begin(), image.data.end());
        write_all(to_child_, px.data(), px.size() * sizeof(float));

        char magic[4];
        read_all(from_child_, magic, 4);
        require(std::memcmp(magic, "FSLR", 4) == 0, ErrorCode::Provider, "loss provider sent a bad frame");
        LossResult r;
        r.loss = get<double>(from_child_);
        const auto w = get<std::uint32_t>(from_child_), h = get<std::uint32_t>(from_child_);
        require(int(w) == image.width && int(h) == image.height, ErrorCode::Provider,
                "loss provider gradient has the wrong size");
        std::vector<float> g(std::size_t(w) * h * 3);
        read_all(from_child_, g.data(), g.size() * sizeof(float));
        r.gradient.assign(g.begin(), g.end());
        require(std::isfinite(r.loss), ErrorCode::Provider, "loss provider returned a non-finite loss");
        return r;
    } catch (...) {
        shutdown();
        throw;
    }
}

// ---------------------------------------------------------------------------------------------
// Appearance optimization

std::vector<std::uint8_t> selection_mask(const GaussianScene &scene, Indices sel, const Camera &cam,
                                         double threshold) {
    check_selection(scene, sel);
    GaussianScene s(scene.sh_degree(), 1);
    s.centroids = scene.centroids;
    s.log_scales = scene.log_scales;
    s.rotations = scene.rotations;
    s.opacity_logits = scene.opacity_logits;
    s.sh = scene.sh;
    s.features.assign(scene.size(), Half(0.0f));
    for (auto i : sel) s.features[i] = Half(1.0f);
    const auto t = raster::rasterize(s, cam);
    std::vector<std::uint8_t> mask(t.feature.size());
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = t.feature[p] > threshold ? 1 : 0;
    return mask;
}

GaussianScene optimize_appearance(const GaussianScene &scene, Indices sel, LossProvider &provider,
                                  const std::vector<Camera> &views, const AppearanceConfig &cfg) {
    check_selection(scene, sel);
    GaussianScene out = scene;
    if (cfg.iterations <= 0 || sel.empty()) return out;
    require(!views.empty(), ErrorCode::Contract, "appearance optimization needs at least one view");
    const int K3 = scene.sh_count() * 3;
    std::vector<double> params(sel.size() * K3), grad(sel.size() * K3);
    for (std::size_t j = 0; j < sel.size(); ++j)
        std::copy_n(scene.sh.begin() + sel[j] * K3, K3, params.begin() + j * K3);
    distill::Adam adam;
    adam.resize(params.size());
    raster::RasterConfig rcfg = cfg.raster;
    rcfg.render_features = false;

    for (int it = 0; it < cfg.iterations; ++it) {
        const int v = it % int(views.size());
        const auto target = raster::rasterize(out, views[v], rcfg);
        const LossResult r = provider.evaluate(target.color_image(), v);
        require(r.gradient.size() == target.color.size(), ErrorCode::Provider,
                "loss provider gradient has the wrong size");
        const auto g = raster::rasterize_backward(out, views[v], target, r.gradient, {}, rcfg);
        for (std::size_t j = 0; j < sel.size(); ++j)
            std::copy_n(g.sh.begin() + sel[j] * K3, K3, grad.begin() + j * K3);
        adam.step(params, grad, cfg.lr);
        for (std::size_t j = 0; j < sel.size(); ++j)
            std::copy_n(params.begin() + j * K3, K3, out.sh.begin() + sel[j] * K3);
    }
    return out;
}

} // namespace fsplat::edit
