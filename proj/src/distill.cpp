#include "fsplat/distill.hpp"

#include "fsplat/binary.hpp"
#include "fsplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace fsplat::distill {

// ---------------------------------------------------------------------------------------------
// MAP

EnhancedFeatureMap masked_average_pool(const FeatureMapD &clip, const std::vector<BinaryMask> &masks) {
    EnhancedFeatureMap out;
    if (masks.empty()) {
        out.map = clip;
        out.parts.assign(std::size_t(clip.height) * clip.width, 0);
        return out;
    }
    const int H = masks.front().height, W = masks.front().width;
    for (const auto &m : masks)
        require(m.height == H && m.width == W, ErrorCode::Contract, "masks must share one resolution");
    out.map = (clip.height == H && clip.width == W) ? clip : resize_bilinear(clip, H, W);
    const int D = out.map.dim;
    const std::size_t npix = std::size_t(H) * W;
    out.parts.assign(npix, 0);
    std::vector<double> accum(npix * D, 0.0);

    Eigen::VectorXd w(D);
    for (std::size_t k = 0; k < masks.size(); ++k) {
        const auto &mask = masks[k];
        w.setZero();
        std::size_t count = 0;
        for (std::size_t p = 0; p < npix; ++p) {
            if (!mask.bits[p]) continue;
            ++count;
            const Eigen::Map<const Eigen::VectorXd> f(out.map.data.data() + p * D, D);
            const double n = f.norm();
            if (n > 0.0) w += f / n;
        }
        if (count == 0) {
            warn("masked_average_pool: mask " + std::to_string(k) + " is empty, skipped");
            ++out.skipped_masks;
            continue;
        }
        w /= double(count);
        for (std::size_t p = 0; p < npix; ++p) {
            if (!mask.bits[p]) continue;
            Eigen::Map<Eigen::VectorXd>(accum.data() + p * D, D) += w;
            ++out.parts[p];
        }
    }
    for (std::size_t p = 0; p < npix; ++p) {
        if (out.parts[p] == 0) continue;
        Eigen::Map<Eigen::VectorXd>(out.map.data.data() + p * D, D) =
            Eigen::Map<const Eigen::VectorXd>(accum.data() + p * D, D) / double(out.parts[p]);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// DecodeHead

DecodeHead::DecodeHead(int input_dim, int hidden, int clip_dim, int dino_dim, std::uint64_t seed, bool bias)
    : bias(bias) {
    require(input_dim > 0 && hidden > 0 && clip_dim > 0 && dino_dim > 0, ErrorCode::Contract,
            "decode head dimensions must be positive");
    std::mt19937_64 rng(seed);
    auto init = [&rng](Eigen::MatrixXd &m, Eigen::VectorXd &b, int rows, int cols) {
        const double bound = 1.0 / std::sqrt(double(cols));
        std::uniform_real_distribution<double> u(-bound, bound);
        m.resize(rows, cols);
        b.resize(rows);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = u(rng);
    };
    init(w1, b1, hidden, input_dim);
    init(wc, bc, clip_dim, hidden);
    init(wd, bd, dino_dim, hidden);
    if (!bias) {
        b1.setZero();
        bc.setZero();
        bd.setZero();
    }
}

DecodeHead DecodeHead::passthrough(int dim, int dino_dim) {
    DecodeHead h;
    h.w1 = Eigen::MatrixXd::Identity(dim, dim);
    h.b1 = Eigen::VectorXd::Zero(dim);
    h.wc = Eigen::MatrixXd::Identity(dim, dim);
    h.bc = Eigen::VectorXd::Zero(dim);
    h.wd = Eigen::MatrixXd::Zero(dino_dim, dim);
    h.bd = Eigen::VectorXd::Zero(dino_dim);
    return h;
}

void DecodeHead::forward(const Eigen::MatrixXd &x, Eigen::MatrixXd &clip, Eigen::MatrixXd &dino) const {
    require(x.rows() == input_dim(), ErrorCode::Contract, "decode head input has wrong dimension");
    const Eigen::MatrixXd h = ((w1 * x).colwise() + b1).cwiseMax(0.0);
    clip = (wc * h).colwise() + bc;
    dino = (wd * h).colwise() + bd;
}

Eigen::VectorXd DecodeHead::decode_clip(const Eigen::VectorXd &x) const {
    require(x.size() == input_dim(), ErrorCode::Contract, "decode head input has wrong dimension");
    const Eigen::VectorXd h = (w1 * x + b1).cwiseMax(0.0);
    return wc * h + bc;
}

DecodeHead::Grad DecodeHead::zero_grad() const {
    Grad g;
    g.w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
    g.wc = Eigen::MatrixXd::Zero(wc.rows(), wc.cols());
    g.wd = Eigen::MatrixXd::Zero(wd.rows(), wd.cols());
    g.b1 = Eigen::VectorXd::Zero(b1.size());
    g.bc = Eigen::VectorXd::Zero(bc.size());
    g.bd = Eigen::VectorXd::Zero(bd.size());
    return g;
}

Eigen::MatrixXd DecodeHead::backward(const Eigen::MatrixXd &x, const Eigen::MatrixXd &dclip,
                                     const Eigen::MatrixXd &ddino, Grad &g) const {
    const Eigen::MatrixXd z = (w1 * x).colwise() + b1;
    const Eigen::MatrixXd h = z.cwiseMax(0.0);
    g.wc.noalias() += dclip * h.transpose();
    g.wd.noalias() += ddino * h.transpose();
    Eigen::MatrixXd dz = wc.transpose() * dclip + wd.transpose() * ddino;
    dz = (z.array() > 0.0).select(dz, 0.0);
    g.w1.noalias() += dz * x.transpose();
    if (bias) {
        g.bc += dclip.rowwise().sum();
        g.bd += ddino.rowwise().sum();
        g.b1 += dz.rowwise().sum();
    }
    return w1.transpose() * dz;
}

namespace {

template <typename Fn>
void for_each_block(Fn &&fn, auto &w1, auto &b1, auto &wc, auto &bc, auto &wd, auto &bd) {
    fn(w1.data(), w1.size());
    fn(b1.data(), b1.size());
    fn(wc.data(), wc.size());
    fn(bc.data(), bc.size());
    fn(wd.data(), wd.size());
    fn(bd.data(), bd.size());
}

} // namespace

std::vector<double> DecodeHead::parameters() const {
    std::vector<double> p;
    for_each_block([&p](const double *d, Eigen::Index n) { p.insert(p.end(), d, d + n); }, w1, b1, wc, bc, wd, bd);
    return p;
}

void DecodeHead::set_parameters(std::span<const double> p) {
    std::size_t off = 0;
    const std::size_t total = std::size_t(w1.size() + b1.size() + wc.size() + bc.size() + wd.size() + bd.size());
    require(p.size() == total, ErrorCode::Contract, "decode head parameter count mismatch");
    for_each_block(
        [&](double *d, Eigen::Index n) {
            std::copy_n(p.begin() + off, n, d);
            off += std::size_t(n);
        },
        w1, b1, wc, bc, wd, bd);
}

std::vector<double> DecodeHead::flatten(const Grad &g) {
    std::vector<double> p;
    for_each_block([&p](const double *d, Eigen::Index n) { p.insert(p.end(), d, d + n); }, g.w1, g.b1, g.wc, g.bc,
                   g.wd, g.bd);
    return p;
}

std::vector<std::uint8_t> encode_head(const DecodeHead &head) {
    binary::Writer w;
    w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>("FSHD"), 4));
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(std::uint32_t(head.input_dim()));
    w.put<std::uint32_t>(std::uint32_t(head.hidden()));
    w.put<std::uint32_t>(std::uint32_t(head.clip_dim()));
    w.put<std::uint32_t>(std::uint32_t(head.dino_dim()));
    w.put<std::uint32_t>(head.bias ? 1u : 0u);
    for (double v : head.parameters()) w.put<double>(v);
    return w.bytes();
}

DecodeHead decode_head(std::span<const std::uint8_t> bytes) {
    binary::Reader r(bytes);
    const auto magic = r.get_bytes(4);
    require(std::equal(magic.begin(), magic.end(), "FSHD"), ErrorCode::Format, "not a decode head file");
    require(r.get<std::uint32_t>() == 1, ErrorCode::Format, "unsupported decode head version");
    const int in = int(r.get<std::uint32_t>()), hidden = int(r.get<std::uint32_t>());
    const int clip = int(r.get<std::uint32_t>()), dino = int(r.get<std::uint32_t>());
    const std::uint32_t bias = r.get<std::uint32_t>();
    require(bias <= 1, ErrorCode::Format, "bad decode head bias flag");
    require(in > 0 && hidden > 0 && clip > 0 && dino > 0 && in < (1 << 16) && hidden < (1 << 16) && clip < (1 << 16) &&
                dino < (1 << 16),
            ErrorCode::Format, "bad decode head dimensions");
    DecodeHead h(in, hidden, clip, dino, 0, bias == 1);
    std::vector<double> p(h.parameters().size());
    require(r.remaining() == p.size() * sizeof(double), ErrorCode::Format, "decode head file has wrong size");
    for (auto &v : p) v = r.get<double>();
    h.set_parameters(p);
    return h;
}

void save_head(const DecodeHead &head, const std::filesystem::path &path) { binary::write_file(path, encode_head(head)); }
DecodeHead load_head(const std::filesystem::path &path) { return decode_head(binary::read_file(path)); }

// ---------------------------------------------------------------------------------------------
// Losses

double l1_loss(std::span<const double> pred, std::span<const double> target, std::span<double> grad) {
    require(pred.size() == target.size() && (grad.empty() || grad.size() == pred.size()), ErrorCode::Contract,
            "l1_loss size mismatch");
    if (pred.empty()) return 0.0;
    const double inv = 1.0 / double(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        sum += std::abs(d);
        if (!grad.empty()) grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return sum * inv;
}

namespace {

/// Separable blur of one plane with zero padding; the kernel is symmetric, so this is also its adjoint.
void blur(const std::vector<double> &in, std::vector<double> &out, std::vector<double> &tmp, int W, int H,
          const std::vector<double> &k) {
    const int r = int(k.size()) / 2;
    tmp.assign(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int j = -r; j <= r; ++j) {
                const int xx = x + j;
                if (xx >= 0 && xx < W) s += k[j + r] * in[std::size_t(y) * W + xx];
            }
            tmp[std::size_t(y) * W + x] = s;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int j = -r; j <= r; ++j) {
                const int yy = y + j;
                if (yy >= 0 && yy < H) s += k[j + r] * tmp[std::size_t(yy) * W + x];
            }
            out[std::size_t(y) * W + x] = s;
        }
}

} // namespace

double ssim(const std::vector<double> &pred, const std::vector<double> &target, int W, int H, int C,
            std::vector<double> *grad, const SsimOptions &opts) {
    const std::size_t npix = std::size_t(W) * H;
    require(pred.size() == npix * C && target.size() == npix * C, ErrorCode::Contract, "ssim size mismatch");
    std::vector<double> kernel(opts.window);
    double ksum = 0.0;
    for (int i = 0; i < opts.window; ++i) {
        const double d = i - opts.window / 2;
        kernel[i] = std::exp(-d * d / (2 * opts.sigma * opts.sigma));
        ksum += kernel[i];
    }
    for (auto &v : kernel) v /= ksum;
    if (grad) grad->assign(pred.size(), 0.0);

    std::vector<double> x(npix), y(npix), t(npix), tmp, mx, my, exx, eyy, exy, gm, ge11, ge12, bm, b11, b12;
    double total = 0.0;
    const double gscale = 1.0 / double(npix * C);
    for (int c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < npix; ++p) {
            x[p] = pred[p * C + c];
            y[p] = target[p * C + c];
        }
        blur(x, mx, tmp, W, H, kernel);
        blur(y, my, tmp, W, H, kernel);
        for (std::size_t p = 0; p < npix; ++p) t[p] = x[p] * x[p];
        blur(t, exx, tmp, W, H, kernel);
        for (std::size_t p = 0; p < npix; ++p) t[p] = y[p] * y[p];
        blur(t, eyy, tmp, W, H, kernel);
        for (std::size_t p = 0; p < npix; ++p) t[p] = x[p] * y[p];
        blur(t, exy, tmp, W, H, kernel);
        if (grad) {
            gm.assign(npix, 0.0);
            ge11.assign(npix, 0.0);
            ge12.assign(npix, 0.0);
        }
        for (std::size_t p = 0; p < npix; ++p) {
            const double ux = mx[p], uy = my[p];
            const double sx = exx[p] - ux * ux, sy = eyy[p] - uy * uy, sxy = exy[p] - ux * uy;
            const double a1 = 2 * ux * uy + opts.c1, a2 = 2 * sxy + opts.c2;
            const double b1 = ux * ux + uy * uy + opts.c1, b2 = sx + sy + opts.c2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad) {
                gm[p] = gscale * s * (2 * uy / a1 - 2 * ux / b1 - 2 * uy / a2 + 2 * ux / b2);
                ge11[p] = -gscale * s / b2;
                ge12[p] = gscale * 2 * s / a2;
            }
        }
        if (grad) {
            blur(gm, bm, tmp, W, H, kernel);
            blur(ge11, b11, tmp, W, H, kernel);
            blur(ge12, b12, tmp, W, H, kernel);
            for (std::size_t p = 0; p < npix; ++p) (*grad)[p * C + c] = bm[p] + 2 * x[p] * b11[p] + y[p] * b12[p];
        }
    }
    return total * gscale;
}

double cosine_loss(const Eigen::MatrixXd &pred, const Eigen::MatrixXd &target, Eigen::MatrixXd *grad) {
    require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::Contract,
            "cosine_loss shape mismatch");
    if (grad) grad->setZero(pred.rows(), pred.cols());
    double loss = 0.0;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        const double np = pred.col(j).norm(), nt = target.col(j).norm();
        if (np == 0.0 || nt == 0.0) {
            loss += 1.0;
            continue;
        }
        const Eigen::VectorXd ph = pred.col(j) / np, th = target.col(j) / nt;
        const double c = ph.dot(th);
        loss += 1.0 - c;
        if (grad) grad->col(j) = -(th - c * ph) / np;
    }
    return loss;
}

double psnr(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size() && !pred.empty(), ErrorCode::Contract, "psnr size mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - target[i]) * (pred[i] - target[i]);
    mse /= double(pred.size());
    return mse > 0.0 ? -10.0 * std::log10(mse) : INFINITY;
}

// ---------------------------------------------------------------------------------------------
// Adam

void Adam::resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    steps.assign(n, 0);
}

void Adam::remap(std::span<const std::size_t> keep, std::size_t appended, int row) {
    std::vector<double> nm, nv;
    std::vector<std::int64_t> ns;
    const std::size_t n = (keep.size() + appended) * row;
    nm.reserve(n);
    nv.reserve(n);
    ns.reserve(n);
    for (auto k : keep)
        for (int j = 0; j < row; ++j) {
            nm.push_back(m[k * row + j]);
            nv.push_back(v[k * row + j]);
            ns.push_back(steps[k * row + j]);
        }
    nm.resize(n, 0.0);
    nv.resize(n, 0.0);
    ns.resize(n, 0);
    m = std::move(nm);
    v = std::move(nv);
    steps = std::move(ns);
}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
    require(params.size() == grad.size() && params.size() == m.size(), ErrorCode::Contract, "Adam size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const auto t = double(++steps[i]);
        const double mh = m[i] / (1.0 - std::pow(beta1, t));
        const double vh = v[i] / (1.0 - std::pow(beta2, t));
        params[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// ---------------------------------------------------------------------------------------------
// Densification

void DensifyStats::resize(std::size_t n) {
    grad_accum.assign(n, 0.0);
    count.assign(n, 0);
}

void DensifyStats::add(const raster::SceneGradients &g, int width, int height) {
    for (std::size_t i = 0; i < g.visible.size(); ++i) {
        if (!g.visible[i]) continue;
        grad_accum[i] += Vec2(g.mean2d[i].x() * 0.5 * width, g.mean2d[i].y() * 0.5 * height).norm();
        ++count[i];
    }
}

DensifyResult densify_and_prune(const GaussianScene &scene, const DensifyStats &stats, const DensifyConfig &cfg,
                                std::mt19937_64 &rng) {
    const std::size_t n = scene.size();
    require(stats.grad_accum.size() == n && stats.count.size() == n, ErrorCode::Contract,
            "densify statistics do not match the scene");
    std::vector<std::uint8_t> clone(n, 0), split(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = stats.count[i] > 0 ? stats.grad_accum[i] / stats.count[i] : 0.0;
        if (!(g >= cfg.grad_threshold)) continue;
        const double max_scale = std::exp(scene.log_scales[i].maxCoeff());
        if (max_scale <= cfg.percent_dense * cfg.extent)
            clone[i] = 1;
        else
            split[i] = 1;
    }

    GaussianScene grown(scene.sh_degree(), scene.feature_dim());
    grown.metadata = scene.metadata;
    std::vector<std::size_t> source;
    DensifyResult res;
    for (std::size_t i = 0; i < n; ++i)
        if (!split[i]) {
            grown.append_from(scene, i);
            source.push_back(i);
        }
    for (std::size_t i = 0; i < n; ++i)
        if (clone[i]) {
            grown.append_from(scene, i);
            source.push_back(i);
            ++res.cloned;
        }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!split[i]) continue;
        ++res.split;
        const Activation act = activate(scene.log_scales[i], scene.rotations[i], scene.opacity_logits[i]);
        for (int child = 0; child < 2; ++child) {
            const std::size_t at = grown.size();
            grown.append_from(scene, i);
            const Vec3 z(normal(rng), normal(rng), normal(rng));
            grown.centroids[at] = scene.centroids[i] + act.rotation * act.scale.cwiseProduct(z);
            grown.log_scales[at] = (act.scale / cfg.split_factor).array().log();
            source.push_back(i);
        }
    }

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < grown.size(); ++i)
        if (!(grown.opacity(i) < cfg.prune_opacity)) keep.push_back(i);
    res.pruned = grown.size() - keep.size();
    res.scene = grown.subset(keep);
    const std::size_t unsplit = n - res.split;
    for (auto k : keep) {
        res.source.push_back(source[k]);
        if (k < unsplit) ++res.originals;
    }
    return res;
}

// ---------------------------------------------------------------------------------------------
// Training

ViewTargets prepare_targets(const DatasetView &view) {
    ViewTargets t;
    const int W = view.rgb.width, H = view.rgb.height;
    require(view.rgb.channels >= 3, ErrorCode::Validation, "training images need RGB channels");
    t.rgb.resize(std::size_t(W) * H * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) t.rgb[(std::size_t(y) * W + x) * 3 + c] = view.rgb.at(x, y, c) / 255.0;
    const FeatureMapD clip = to_double(view.clip);
    if (view.masks.empty())
        t.clip = (clip.height == H && clip.width == W) ? clip : resize_bilinear(clip, H, W);
    else
        t.clip = masked_average_pool(clip, view.masks).map;
    const FeatureMapD dino = to_double(view.dino);
    t.dino = (dino.height == H && dino.width == W) ? dino : resize_bilinear(dino, H, W);
    return t;
}

double camera_extent(const FeatureDataset &ds) {
    if (ds.views.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto &v : ds.views) mean += v.camera.center();
    mean /= double(ds.views.size());
    double r = 0.0;
    for (const auto &v : ds.views) r = std::max(r, (v.camera.center() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

namespace {

struct FeatureStep {
    double clip = 0.0, dino = 0.0; // summed losses
    std::size_t pixels = 0;
    std::vector<double> dF;        // H*W*d
};

/// Decodes rendered features at supervised pixels and returns losses plus dL/dF.
FeatureStep feature_objective(const raster::RenderTarget &t, const ViewTargets &tg, const DecodeHead &head,
                              double lambda, double alpha_threshold, DecodeHead::Grad *hg) {
    FeatureStep fs;
    const int d = t.feature_dim;
    std::vector<std::size_t> pix;
    for (std::size_t p = 0; p < t.alpha.size(); ++p)
        if (t.alpha[p] > alpha_threshold) pix.push_back(p);
    fs.pixels = pix.size();
    if (hg) fs.dF.assign(t.feature.size(), 0.0);
    if (pix.empty()) return fs;
    const int Dc = head.clip_dim(), Dd = head.dino_dim();
    require(tg.clip.dim == Dc && tg.dino.dim == Dd, ErrorCode::Contract, "reference feature dims do not match the head");
    Eigen::MatrixXd X(d, pix.size()), TC(Dc, pix.size()), TD(Dd, pix.size());
    for (std::size_t k = 0; k < pix.size(); ++k) {
        const std::size_t p = pix[k];
        X.col(k) = Eigen::Map<const Eigen::VectorXd>(t.feature.data() + p * d, d);
        TC.col(k) = Eigen::Map<const Eigen::VectorXd>(tg.clip.data.data() + p * Dc, Dc);
        TD.col(k) = Eigen::Map<const Eigen::VectorXd>(tg.dino.data.data() + p * Dd, Dd);
    }
    Eigen::MatrixXd C, D, gC, gD;
    head.forward(X, C, D);
    fs.clip = cosine_loss(C, TC, hg ? &gC : nullptr);
    fs.dino = cosine_loss(D, TD, hg ? &gD : nullptr);
    if (hg) {
        gD *= lambda;
        const Eigen::MatrixXd dX = head.backward(X, gC, gD, *hg);
        for (std::size_t k = 0; k < pix.size(); ++k)
            Eigen::Map<Eigen::VectorXd>(fs.dF.data() + pix[k] * d, d) = dX.col(k);
    }
    return fs;
}

template <typename V>
std::span<double> flat(std::vector<V> &v) {
    return {reinterpret_cast<double *>(v.data()), v.size() * sizeof(V) / sizeof(double)};
}
template <typename V>
std::span<const double> flat(const std::vector<V> &v) {
    return {reinterpret_cast<const double *>(v.data()), v.size() * sizeof(V) / sizeof(double)};
}

} // namespace

TrainResult train(const GaussianScene &initial, const FeatureDataset &dataset, const TrainConfig &cfg,
                  const std::function<void(const IterationLog &)> &progress) {
    require(!dataset.views.empty(), ErrorCode::Contract, "dataset has no views");
    const DecodeHead head(initial.feature_dim(), cfg.hidden, dataset.views.front().clip.dim,
                          dataset.views.front().dino.dim, cfg.seed ^ 0x5851f42d4c957f2dULL, cfg.head_bias);
    return train(initial, dataset, head, cfg, progress);
}

TrainResult train(const GaussianScene &initial, const FeatureDataset &dataset, const DecodeHead &initial_head,
                  const TrainConfig &cfg, const std::function<void(const IterationLog &)> &progress) {
    const auto views = dataset.training_views();
    require(views.size() >= 2, ErrorCode::Contract, "training needs at least two views");
    require(cfg.feature_iterations <= cfg.iterations, ErrorCode::Contract, "N_feat exceeds total iterations");
    require(!cfg.feature_learning || initial.feature_dim() == initial_head.input_dim(), ErrorCode::Contract,
            "scene feature_dim does not match the decode head");
    initial.validate();

    std::vector<ViewTargets> targets(dataset.views.size());
    for (int v : views) targets[v] = prepare_targets(dataset.views[v]);

    TrainResult res;
    res.scene = initial;
    res.head = initial_head;
    res.source.resize(initial.size());
    std::iota(res.source.begin(), res.source.end(), std::size_t(0));
    GaussianScene &scene = res.scene;
    const int d = scene.feature_dim();
    const int K3 = scene.sh_count() * 3;
    const double extent = camera_extent(dataset);

    // Independent streams so optional work never shifts another stream.
    std::mt19937_64 view_rng(cfg.seed), densify_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);

    Adam a_centroid, a_scale, a_rot, a_opacity, a_sh, a_feature, a_head;
    auto reset_all = [&] {
        a_centroid.resize(scene.size() * 3);
        a_scale.resize(scene.size() * 3);
        a_rot.resize(scene.size() * 4);
        a_opacity.resize(scene.size());
        a_sh.resize(scene.size() * K3);
        a_feature.resize(scene.size() * d);
    };
    reset_all();
    std::vector<double> head_params = res.head.parameters();
    a_head.resize(head_params.size());
    std::vector<double> master(scene.features.size());
    for (std::size_t i = 0; i < master.size(); ++i) master[i] = double(float(scene.features[i]));

    DensifyStats stats;
    stats.resize(scene.size());
    raster::RasterConfig rcfg = cfg.raster;
    rcfg.threads = cfg.threads;
    raster::BackwardOptions bopts;
    bopts.feature_to_geometry = false;

    std::vector<int> stack;
    std::vector<double> dC, gl1, gssim;
    for (int it = 0; it < cfg.iterations; ++it) {
        const int iteration = it + 1;
        if (stack.empty()) {
            stack = views;
            std::shuffle(stack.begin(), stack.end(), view_rng);
        }
        const int v = stack.back();
        stack.pop_back();
        const Camera &cam = dataset.views[v].camera;
        const ViewTargets &tg = targets[v];
        const bool features_on = cfg.feature_learning && it < cfg.feature_iterations && d > 0;

        rcfg.render_features = features_on;
        const raster::RenderTarget target = raster::rasterize(scene, cam, rcfg);

        const std::size_t n3 = target.color.size();
        dC.assign(n3, 0.0);
        gl1.assign(n3, 0.0);
        const double l1 = l1_loss(target.color, tg.rgb, gl1);
        const double s = ssim(target.color, tg.rgb, target.width, target.height, 3, &gssim);
        const double color_loss = cfg.l1_weight * l1 + cfg.dssim_weight * (1.0 - s);
        for (std::size_t i = 0; i < n3; ++i) dC[i] = cfg.l1_weight * gl1[i] - cfg.dssim_weight * gssim[i];

        IterationLog log;
        log.iteration = iteration;
        log.view = v;
        log.color_loss = color_loss;
        log.psnr = psnr(target.color, tg.rgb);

        DecodeHead::Grad hg;
        FeatureStep fs;
        if (features_on) {
            hg = res.head.zero_grad();
            fs = feature_objective(target, tg, res.head, cfg.lambda_dino, cfg.feature_alpha_threshold, &hg);
            if (fs.pixels > 0) {
                log.clip_loss = fs.clip / double(fs.pixels);
                log.dino_loss = fs.dino / double(fs.pixels);
            }
        }
        if (!std::isfinite(color_loss) || !std::isfinite(fs.clip) || !std::isfinite(fs.dino))
            fail(ErrorCode::Divergence, "loss is not finite at iteration " + std::to_string(iteration));

        const raster::SceneGradients g =
            raster::rasterize_backward(scene, cam, target, dC, features_on ? std::span<const double>(fs.dF) : std::span<const double>{},
                                       rcfg, bopts);

        if (iteration < cfg.densify_until) stats.add(g, target.width, target.height);

        // Parameter updates.
        const double t = std::clamp(double(it) / std::max(1, cfg.iterations), 0.0, 1.0);
        const double lr_c = std::exp((1.0 - t) * std::log(cfg.lr_centroid * extent) + t * std::log(cfg.lr_centroid_final * extent));
        a_centroid.step(flat(scene.centroids), flat(g.centroid), lr_c);
        a_scale.step(flat(scene.log_scales), flat(g.log_scale), cfg.lr_scale);
        a_rot.step(flat(scene.rotations), flat(g.rotation), cfg.lr_rotation);
        a_opacity.step(scene.opacity_logits, g.opacity_logit, cfg.lr_opacity);
        a_sh.step(scene.sh, g.sh, cfg.lr_sh);
        if (features_on) {
            a_feature.step(master, g.feature, cfg.lr_feature);
            for (std::size_t i = 0; i < master.size(); ++i) scene.features[i] = Half(float(master[i]));
            const auto hgrad = DecodeHead::flatten(hg);
            a_head.step(head_params, hgrad, cfg.lr_mlp);
            res.head.set_parameters(head_params);
        }

        // Densification.
        if (iteration < cfg.densify_until) {
            if (iteration > cfg.densify_from && iteration % cfg.densify_interval == 0 && scene.size() < cfg.max_gaussians) {
                DensifyConfig dc{cfg.densify_grad_threshold, extent, cfg.percent_dense, cfg.split_factor, cfg.prune_opacity};
                DensifyResult dr = densify_and_prune(scene, stats, dc, densify_rng);
                // The surviving prefix keeps its optimizer moments; new rows start from zero.
                const std::vector<std::size_t> kept_rows(dr.source.begin(), dr.source.begin() + dr.originals);
                const std::size_t appended = dr.source.size() - dr.originals;
                std::vector<double> new_master;
                new_master.reserve(dr.source.size() * d);
                for (auto src : dr.source)
                    new_master.insert(new_master.end(), master.begin() + src * d, master.begin() + (src + 1) * d);
                master = std::move(new_master);
                a_centroid.remap(kept_rows, appended, 3);
                a_scale.remap(kept_rows, appended, 3);
                a_rot.remap(kept_rows, appended, 4);
                a_opacity.remap(kept_rows, appended, 1);
                a_sh.remap(kept_rows, appended, K3);
                a_feature.remap(kept_rows, appended, d);
                std::vector<std::size_t> lineage(dr.source.size());
                for (std::size_t k = 0; k < dr.source.size(); ++k) lineage[k] = res.source[dr.source[k]];
                res.source = std::move(lineage);
                scene = std::move(dr.scene);
                stats.resize(scene.size());
            }
            if (cfg.opacity_reset_interval > 0 && iteration % cfg.opacity_reset_interval == 0) {
                const double cap = inverse_sigmoid(0.01);
                for (auto &o : scene.opacity_logits) o = std::min(o, cap);
                a_opacity.resize(scene.size());
            }
        }

        log.gaussians = scene.size();
        if (cfg.log_interval > 0 && (iteration % cfg.log_interval == 0 || iteration == cfg.iterations)) {
            res.history.push_back(log);
            if (progress) progress(log);
        }
    }
    return res;
}

double feature_loss(const GaussianScene &scene, const DecodeHead &head, const FeatureDataset &dataset,
                    std::span<const int> views, const TrainConfig &cfg) {
    double total = 0.0;
    std::size_t pixels = 0;
    raster::RasterConfig rcfg = cfg.raster;
    rcfg.threads = cfg.threads;
    rcfg.render_features = true;
    for (int v : views) {
        require(v >= 0 && std::size_t(v) < dataset.views.size(), ErrorCode::Contract, "view index out of range");
        const ViewTargets tg = prepare_targets(dataset.views[v]);
        const auto t = raster::rasterize(scene, dataset.views[v].camera, rcfg);
        const FeatureStep fs = feature_objective(t, tg, head, 0.0, cfg.feature_alpha_threshold, nullptr);
        total += fs.clip;
        pixels += fs.pixels;
    }
    return pixels > 0 ? total / double(pixels) : 0.0;
}

void write_loss_csv(const std::vector<IterationLog> &history, const std::filesystem::path &path) {
    std::ofstream out(path);
    require(bool(out), ErrorCode::Io, "cannot write " + path.string());
    out << "iteration,view,color_loss,psnr,clip_loss,dino_loss,gaussians\n";
    out << std::setprecision(17);
    for (const auto &l : history)
        out << l.iteration << ',' << l.view << ',' << l.color_loss << ',' << l.psnr << ',' << l.clip_loss << ','
            << l.dino_loss << ',' << l.gaussians << '\n';
    require(bool(out), ErrorCode::Io, "failed writing " + path.string());
}

} // namespace fsplat::distill
