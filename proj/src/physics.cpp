#include "fsplat/physics.hpp"

#include "fsplat/decompose.hpp"
#include "fsplat/edit.hpp"
#include "fsplat/error.hpp"
#include "fsplat/log.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace fsplat::physics {

std::string_view to_string(Model m) {
    switch (m) {
    case Model::Rigid: return "rigid";
    case Model::Elastic: return "elastic";
    case Model::Granular: return "granular";
    case Model::Liquid: return "liquid";
    }
    return "?";
}

Model model_from_string(const std::string &s) {
    if (s == "rigid") return Model::Rigid;
    if (s == "elastic") return Model::Elastic;
    if (s == "granular" || s == "sand") return Model::Granular;
    if (s == "liquid" || s == "water") return Model::Liquid;
    fail(ErrorCode::BadRequest, "unknown material model '" + s + "'");
}

void MaterialSpec::validate() const {
    require(density > 0.0 && std::isfinite(density), ErrorCode::Contract, "material " + name + ": density must be > 0");
    require(youngs > 0.0 && std::isfinite(youngs), ErrorCode::Contract, "material " + name + ": E must be > 0");
    require(poisson >= 0.0 && poisson < 0.5, ErrorCode::Contract, "material " + name + ": nu must be in [0, 0.5)");
    require(bulk > 0.0 && std::isfinite(bulk), ErrorCode::Contract, "material " + name + ": bulk modulus must be > 0");
    require(friction_angle >= 0.0 && friction_angle < 90.0, ErrorCode::Contract,
            "material " + name + ": friction angle must be in [0, 90)");
}

std::vector<MaterialSpec> default_bank() {
    std::vector<MaterialSpec> bank(4);
    bank[0].name = "rigid";
    bank[0].model = Model::Rigid;
    bank[0].aliases = {"wood", "ceramic", "steel"};
    bank[1].name = "elastic";
    bank[1].model = Model::Elastic;
    bank[2].name = "sand";
    bank[2].model = Model::Granular;
    bank[2].aliases = {"granular"};
    bank[3].name = "water";
    bank[3].model = Model::Liquid;
    bank[3].aliases = {"liquid"};
    return bank;
}

std::size_t find_material(const std::vector<MaterialSpec> &bank, const std::string &name) {
    for (std::size_t i = 0; i < bank.size(); ++i) {
        if (bank[i].name == name) return i;
        if (std::find(bank[i].aliases.begin(), bank[i].aliases.end(), name) != bank[i].aliases.end()) return i;
    }
    fail(ErrorCode::BadRequest, "no material named '" + name + "'");
}

// ---------------------------------------------------------------------------------------------
// Particle system

double ParticleSystem::particle_mass() const {
    double m = 0.0;
    for (const auto &p : particles)
        if (materials[p.material].model != Model::Rigid) m += p.mass;
    return m;
}

Vec3 ParticleSystem::momentum() const {
    Vec3 m = Vec3::Zero();
    for (const auto &p : particles)
        if (materials[p.material].model != Model::Rigid) m += p.mass * p.v;
    return m;
}

double ParticleSystem::max_speed() const {
    double s = 0.0;
    for (const auto &p : particles) s = std::max(s, p.v.norm());
    return s;
}

void Grid::init(const Vec3 &o, double spacing, int r) {
    require(r >= 4, ErrorCode::Contract, "grid resolution must be at least 4");
    require(spacing > 0.0 && std::isfinite(spacing), ErrorCode::Contract, "grid spacing must be positive");
    origin = o;
    dx = spacing;
    res = r;
    const std::size_t n = std::size_t(r) * r * r;
    momentum.assign(n, Vec3::Zero());
    mass.assign(n, 0.0);
    kinematic_v.assign(n, Vec3::Zero());
    kinematic_w.assign(n, 0.0);
    active.clear();
}

void init_grid(ParticleSystem &ps, const SimConfig &cfg) {
    Vec3 lo, hi;
    if (cfg.domain) {
        lo = cfg.domain->first;
        hi = cfg.domain->second;
        require((hi - lo).minCoeff() > 0.0, ErrorCode::Contract, "simulation domain is empty");
    } else {
        require(!ps.particles.empty(), ErrorCode::EmptySelection, "no particles to simulate");
        lo = hi = ps.particles[0].x;
        Vec3 mean = Vec3::Zero();
        for (const auto &p : ps.particles) {
            lo = lo.cwiseMin(p.x);
            hi = hi.cwiseMax(p.x);
            mean += p.x;
        }
        mean /= double(ps.particles.size());
        // Reach the collision planes the material may fall onto.
        for (const auto &cp : cfg.planes) {
            const Vec3 foot = mean - cp.plane.signed_distance(mean) * cp.plane.normal;
            lo = lo.cwiseMin(foot);
            hi = hi.cwiseMax(foot);
        }
        const double extent = std::max((hi - lo).maxCoeff(), 1e-3);
        lo.array() -= cfg.padding * extent;
        hi.array() += cfg.padding * extent;
    }
    const double side = (hi - lo).maxCoeff();
    const Vec3 center = 0.5 * (lo + hi);
    // Three spare cells on each side hold the wall condition and the kernel stencil.
    const int res = cfg.grid_res;
    require(res > 8, ErrorCode::Contract, "grid resolution must exceed 8");
    const double dx = side / double(res - 6);
    ps.grid.init(center - Vec3::Constant(0.5 * dx * res), dx, res);
}

namespace {

struct Kernel {
    int base[3];
    double fx[3];
    double w[3][3];

    Kernel(const Vec3 &x, const Grid &g) {
        for (int a = 0; a < 3; ++a) {
            const double xg = (x[a] - g.origin[a]) / g.dx;
            base[a] = std::clamp(int(std::floor(xg - 0.5)), 0, g.res - 3);
            fx[a] = xg - base[a];
            const double f = fx[a];
            w[a][0] = 0.5 * (1.5 - f) * (1.5 - f);
            w[a][1] = 0.75 - (f - 1.0) * (f - 1.0);
            w[a][2] = 0.5 * (f - 0.5) * (f - 0.5);
        }
    }
};

Mat3 polar_rotation(const Mat3 &F) {
    Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU();
    const Mat3 &V = svd.matrixV();
    if ((U * V.transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    return U * V.transpose();
}

/// Kirchhoff stress tau = P F^T.
Mat3 kirchhoff(const Particle &p, const MaterialSpec &m) {
    switch (m.model) {
    case Model::Elastic: {
        const double J = p.F.determinant();
        const Mat3 R = polar_rotation(p.F);
        return 2.0 * m.mu() * (p.F - R) * p.F.transpose() + m.lambda() * (J - 1.0) * J * Mat3::Identity();
    }
    case Model::Granular: {
        Eigen::JacobiSVD<Mat3> svd(p.F, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vec3 sig = svd.singularValues().cwiseMax(1e-6);
        const Vec3 eps = sig.array().log().matrix();
        const Vec3 t = 2.0 * m.mu() * eps + Vec3::Constant(m.lambda() * eps.sum());
        return svd.matrixU() * t.asDiagonal() * svd.matrixU().transpose();
    }
    case Model::Liquid: return m.bulk * (p.J - 1.0) * p.J * Mat3::Identity();
    case Model::Rigid: break;
    }
    return Mat3::Zero();
}

/// Drucker-Prager projection of F in Hencky strain; tension separates freely.
void drucker_prager(Particle &p, const MaterialSpec &m) {
    Eigen::JacobiSVD<Mat3> svd(p.F, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sig = svd.singularValues().cwiseMax(1e-6);
    Vec3 eps = sig.array().log().matrix();
    const double tr = eps.sum();
    const double sin_phi = std::sin(m.friction_angle * std::numbers::pi / 180.0);
    const double alpha = std::sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi);
    if (tr >= 0.0) {
        eps.setZero();
    } else {
        const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
        const double dev_norm = dev.norm();
        const double mu = m.mu(), la = m.lambda();
        const double dgamma = dev_norm + (3.0 * la + 2.0 * mu) / (2.0 * mu) * tr * alpha;
        if (dgamma > 0.0 && dev_norm > 0.0) eps -= dgamma / dev_norm * dev;
    }
    const Vec3 s = eps.array().exp().matrix();
    p.F = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

void project_planes(Vec3 &v, const Vec3 &x, const SimConfig &cfg) {
    for (const auto &cp : cfg.planes) {
        if (cp.plane.signed_distance(x) > 0.0) continue;
        const Vec3 &n = cp.plane.normal;
        const double vn = v.dot(n);
        if (vn >= 0.0) continue;
        const Vec3 vt = v - vn * n;
        const double tn = vt.norm();
        if (tn <= -cp.friction * vn) v.setZero();
        else v = vt * (1.0 + cp.friction * vn / tn);
    }
}

} // namespace

void step(ParticleSystem &ps, const SimConfig &cfg, double dt) {
    Grid &g = ps.grid;
    require(g.res > 0, ErrorCode::Contract, "grid not initialised");
    require(dt > 0.0 && std::isfinite(dt), ErrorCode::Contract, "dt must be positive");
    const double speed = ps.max_speed();
    if (!(dt * speed < cfg.cfl * g.dx))
        fail(ErrorCode::Cfl, "CFL violated: dt*|v| = " + std::to_string(dt * speed) + " >= " +
                                 std::to_string(cfg.cfl * g.dx));

    for (auto idx : g.active) {
        g.momentum[idx].setZero();
        g.mass[idx] = 0.0;
        g.kinematic_v[idx].setZero();
        g.kinematic_w[idx] = 0.0;
    }
    g.active.clear();
    auto touch = [&](std::size_t idx) {
        if (g.mass[idx] == 0.0 && g.kinematic_w[idx] == 0.0) g.active.push_back(std::uint32_t(idx));
    };

    const double inv_dx = 1.0 / g.dx;
    const double dinv = 4.0 * inv_dx * inv_dx;

    // P2G
    for (const Particle &p : ps.particles) {
        const MaterialSpec &mat = ps.materials[p.material];
        const Kernel k(p.x, g);
        if (mat.model == Model::Rigid) {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    for (int l = 0; l < 3; ++l) {
                        const double w = k.w[0][i] * k.w[1][j] * k.w[2][l];
                        const std::size_t idx = g.index(k.base[0] + i, k.base[1] + j, k.base[2] + l);
                        touch(idx);
                        g.kinematic_v[idx] += w * p.v;
                        g.kinematic_w[idx] += w;
                    }
            continue;
        }
        const Mat3 affine = -dt * p.volume * dinv * kirchhoff(p, mat) + p.mass * p.C;
        const Vec3 mv = p.mass * p.v;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int l = 0; l < 3; ++l) {
                    const double w = k.w[0][i] * k.w[1][j] * k.w[2][l];
                    const Vec3 dpos = (Vec3(i, j, l) - Vec3(k.fx[0], k.fx[1], k.fx[2])) * g.dx;
                    const std::size_t idx = g.index(k.base[0] + i, k.base[1] + j, k.base[2] + l);
                    touch(idx);
                    g.momentum[idx] += w * (mv + affine * dpos);
                    g.mass[idx] += w * p.mass;
                }
    }
    // Summed in a fixed order so the value is reproducible. A zero weight leaves mass at 0,
    // so a node can be touched twice.
    std::sort(g.active.begin(), g.active.end());
    g.active.erase(std::unique(g.active.begin(), g.active.end()), g.active.end());
    double grid_mass = 0.0;
    for (auto idx : g.active) grid_mass += g.mass[idx];
    ps.last_grid_mass = grid_mass;

    // Grid update
    const double decay = cfg.damping > 0.0 ? std::exp(-cfg.damping * dt) : 1.0;
    const int r = g.res;
    for (auto idx : g.active) {
        Vec3 v = Vec3::Zero();
        if (g.mass[idx] > 0.0) v = (g.momentum[idx] / g.mass[idx] + dt * cfg.gravity) * decay;
        if (g.kinematic_w[idx] > 0.0) v = g.kinematic_v[idx] / g.kinematic_w[idx];
        const int i = int(idx / (std::size_t(r) * r)), j = int((idx / r) % r), l = int(idx % r);
        const Vec3 xi = g.origin + Vec3(i, j, l) * g.dx;
        if (g.kinematic_w[idx] == 0.0) project_planes(v, xi, cfg);
        const int c[3] = {i, j, l};
        for (int a = 0; a < 3; ++a) {
            if (c[a] < 3 && v[a] < 0.0) v[a] = 0.0;
            if (c[a] > r - 4 && v[a] > 0.0) v[a] = 0.0;
        }
        g.momentum[idx] = v;
    }

    // G2P
    const double lo = 1.0, hi = double(r) - 2.0;
    for (Particle &p : ps.particles) {
        const MaterialSpec &mat = ps.materials[p.material];
        if (mat.model == Model::Rigid) {
            p.x += dt * p.v;
            continue;
        }
        const Kernel k(p.x, g);
        Vec3 v = Vec3::Zero();
        Mat3 B = Mat3::Zero();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int l = 0; l < 3; ++l) {
                    const double w = k.w[0][i] * k.w[1][j] * k.w[2][l];
                    const Vec3 dpos = (Vec3(i, j, l) - Vec3(k.fx[0], k.fx[1], k.fx[2])) * g.dx;
                    const Vec3 &vi = g.momentum[g.index(k.base[0] + i, k.base[1] + j, k.base[2] + l)];
                    v += w * vi;
                    B += w * vi * dpos.transpose();
                }
        p.v = v;
        p.C = dinv * B;
        p.x += dt * v;
        for (int a = 0; a < 3; ++a) {
            const double xg = (p.x[a] - g.origin[a]) * inv_dx;
            p.x[a] = g.origin[a] + std::clamp(xg, lo, hi) * g.dx;
        }
        const Mat3 step_F = Mat3::Identity() + dt * p.C;
        switch (mat.model) {
        case Model::Elastic: p.F = step_F * p.F; break;
        case Model::Granular:
            p.F = step_F * p.F;
            drucker_prager(p, mat);
            break;
        case Model::Liquid:
            p.J *= step_F.determinant();
            p.F = std::cbrt(p.J) * Mat3::Identity();
            break;
        case Model::Rigid: break;
        }
    }
    ps.time += dt;
}

void advance(ParticleSystem &ps, const SimConfig &cfg, double duration, double dt) {
    require(dt > 0.0, ErrorCode::Contract, "dt must be positive");
    double t = 0.0;
    const double eps = 1e-9 * duration;
    while (t < duration - eps) {
        double h = std::min(dt, duration - t);
        const double speed = ps.max_speed();
        int halvings = 0;
        while (!(h * speed < cfg.cfl * ps.grid.dx) && halvings < cfg.max_subdivisions) {
            h *= 0.5;
            ++halvings;
        }
        step(ps, cfg, h); // throws Cfl if still violated
        t += h;
    }
}

double default_dt(const GaussianScene &scene, const SimConfig &cfg) {
    if (cfg.dt > 0.0) return cfg.dt;
    return 1e-4 * scene.metadata.scene_scale;
}

// ---------------------------------------------------------------------------------------------
// Materials

std::vector<int> assign_materials(const GaussianScene &scene, std::span<const std::size_t> sel,
                                  const distill::DecodeHead &head, const Vocabulary &vocab,
                                  const std::vector<MaterialSpec> &bank, const std::string &default_material,
                                  double tau, double temperature) {
    require(!bank.empty(), ErrorCode::Contract, "material bank is empty");
    require(!sel.empty(), ErrorCode::EmptySelection, "no Gaussians selected for material assignment");
    edit::check_selection(scene, sel);
    for (const auto &m : bank) m.validate();
    const int fallback = int(find_material(bank, default_material));

    std::vector<int> out(sel.size(), fallback);
    const GaussianScene sub = scene.subset(sel);
    const Eigen::MatrixXd decoded = decompose::decode_features(sub, head);

    std::vector<double> best(sel.size(), -1.0);
    for (std::size_t mi = 0; mi < bank.size(); ++mi) {
        if (bank[mi].model != Model::Rigid) continue;
        for (const auto &alias : bank[mi].aliases) {
            if (!vocab.count(alias)) continue;
            decompose::QuerySpec q;
            q.positive = alias;
            q.tau = tau;
            q.temperature = temperature;
            q.negatives.clear();
            for (const char *w : {"objects", "things"})
                if (vocab.count(w)) q.negatives.push_back(w);
            if (q.negatives.empty())
                for (const auto &[word, vec] : vocab)
                    if (word != alias) q.negatives.push_back(word);
            if (q.negatives.empty()) continue;
            const auto p = decompose::positive_probability(decoded, vocab, q);
            for (std::size_t i = 0; i < p.size(); ++i)
                if (p[i] > tau && p[i] > best[i]) {
                    best[i] = p[i];
                    out[i] = int(mi);
                }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Infill

InfillResult infill(const GaussianScene &scene, std::span<const std::size_t> sel, std::span<const int> material,
                    const std::vector<MaterialSpec> &bank, const SimConfig &cfg) {
    require(!sel.empty(), ErrorCode::EmptySelection, "no Gaussians selected for simulation");
    require(material.size() == sel.size(), ErrorCode::Contract, "one material id per selected Gaussian required");
    require(cfg.infill_grid_res >= 2, ErrorCode::Contract, "infill grid resolution must be at least 2");
    require(cfg.samples_per_gaussian >= 0, ErrorCode::Contract, "samples_per_gaussian must be >= 0");
    edit::check_selection(scene, sel);
    for (int m : material)
        require(m >= 0 && std::size_t(m) < bank.size(), ErrorCode::Contract, "material id out of range");
    for (const auto &m : bank) m.validate();

    InfillResult out;
    ParticleSystem &ps = out.system;
    ps.materials = bank;

    std::vector<Vec3> surface_points; // points that mark voxels occupied
    for (std::size_t j = 0; j < sel.size(); ++j) {
        Particle p;
        p.x = scene.centroids[sel[j]];
        p.material = material[j];
        p.binding = std::int64_t(sel[j]);
        ps.particles.push_back(p);
    }
    out.bound = sel.size();

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int attempts = 64 * std::max(cfg.samples_per_gaussian, 1);
    for (std::size_t j = 0; j < sel.size(); ++j) {
        const std::size_t gi = sel[j];
        const Activation act = activate(scene.log_scales[gi], scene.rotations[gi], scene.opacity_logits[gi]);
        if (!(act.opacity > cfg.surface_opacity)) continue;
        surface_points.push_back(scene.centroids[gi]);
        int order[3] = {0, 1, 2};
        std::sort(order, order + 3, [&](int a, int b) { return act.scale[a] > act.scale[b]; });
        const Vec3 a1 = act.rotation.col(order[0]) * act.scale[order[0]];
        const Vec3 a2 = act.rotation.col(order[1]) * act.scale[order[1]];
        int accepted = 0;
        for (int t = 0; t < attempts && accepted < cfg.samples_per_gaussian; ++t) {
            // Uniform on the 2-sigma disk, thinned by density and opacity.
            const double u = 4.0 * uni(rng) - 2.0, v = 4.0 * uni(rng) - 2.0;
            const double r2 = u * u + v * v;
            const double accept = uni(rng);
            if (r2 > 4.0) continue;
            if (accept >= act.opacity * std::exp(-0.5 * r2)) continue;
            Particle p;
            p.x = scene.centroids[gi] + u * a1 + v * a2;
            p.material = material[j];
            p.transparent = true;
            ps.particles.push_back(p);
            surface_points.push_back(p.x);
            ++accepted;
        }
    }
    out.surface = ps.particles.size() - out.bound;

    // Voxel grid over every particle so far.
    Vec3 lo = ps.particles[0].x, hi = lo;
    for (const auto &p : ps.particles) {
        lo = lo.cwiseMin(p.x);
        hi = hi.cwiseMax(p.x);
    }
    const int R = cfg.infill_grid_res;
    double side = (hi - lo).maxCoeff();
    if (!(side > 0.0)) side = 1e-3;
    const double vox = side / R;
    const Vec3 origin = 0.5 * (lo + hi) - Vec3::Constant(0.5 * side);
    out.voxel = vox;
    out.voxel_origin = origin;
    auto voxel_of = [&](const Vec3 &x) {
        std::array<int, 3> c;
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(int(std::floor((x[a] - origin[a]) / vox)), 0, R - 1);
        return c;
    };
    auto vindex = [&](int i, int j, int k) { return (std::size_t(i) * R + j) * R + k; };

    std::vector<std::uint8_t> occupied(std::size_t(R) * R * R, 0);
    for (const auto &x : surface_points) {
        const auto c = voxel_of(x);
        occupied[vindex(c[0], c[1], c[2])] = 1;
    }

    // Surface particles share their voxel's volume.
    std::vector<int> count(occupied.size(), 0);
    for (const auto &p : ps.particles) {
        const auto c = voxel_of(p.x);
        ++count[vindex(c[0], c[1], c[2])];
    }
    const double voxel_volume = vox * vox * vox;
    for (auto &p : ps.particles) {
        const auto c = voxel_of(p.x);
        p.volume = voxel_volume / count[vindex(c[0], c[1], c[2])];
        p.mass = bank[p.material].density * p.volume;
    }

    if (cfg.infill) {
        // hits[v] counts the axis directions in which an occupied voxel lies strictly beyond v.
        std::vector<std::uint8_t> hits(occupied.size(), 0);
        for (int axis = 0; axis < 3; ++axis) {
            for (int u = 0; u < R; ++u)
                for (int w = 0; w < R; ++w) {
                    auto at = [&](int s) {
                        int c[3];
                        c[axis] = s;
                        c[(axis + 1) % 3] = u;
                        c[(axis + 2) % 3] = w;
                        return vindex(c[0], c[1], c[2]);
                    };
                    bool seen = false;
                    for (int s = 0; s < R; ++s) {
                        if (seen) ++hits[at(s)];
                        if (occupied[at(s)]) seen = true;
                    }
                    seen = false;
                    for (int s = R - 1; s >= 0; --s) {
                        if (seen) ++hits[at(s)];
                        if (occupied[at(s)]) seen = true;
                    }
                }
        }
        std::vector<Vec3> bound_pos;
        for (std::size_t j = 0; j < out.bound; ++j) bound_pos.push_back(ps.particles[j].x);
        const geom::KdTree tree(bound_pos);
        for (int i = 0; i < R; ++i)
            for (int j = 0; j < R; ++j)
                for (int k = 0; k < R; ++k) {
                    const std::size_t v = vindex(i, j, k);
                    if (occupied[v] || hits[v] < 5) continue;
                    Particle p;
                    p.x = origin + (Vec3(i, j, k) + Vec3::Constant(0.5)) * vox;
                    p.material = ps.particles[tree.knn(p.x, 1)[0]].material;
                    p.volume = voxel_volume;
                    p.mass = bank[p.material].density * voxel_volume;
                    p.transparent = true;
                    ps.particles.push_back(p);
                }
        out.interior = ps.particles.size() - out.bound - out.surface;
        if (out.interior == 0) warn("infill found no enclosed voxels; the selection may be flat or open");
    }
    return out;
}

GaussianScene with_infill_gaussians(const GaussianScene &scene, const InfillResult &inf) {
    GaussianScene out = scene;
    for (std::size_t i = inf.bound; i < inf.system.particles.size(); ++i) {
        Gaussian g;
        g.centroid = inf.system.particles[i].x;
        g.log_scale = Vec3::Constant(std::log(0.5 * std::max(inf.voxel, 1e-12)));
        // sigmoid(-1e4) is exactly 0, so projection culls it.
        g.opacity_logit = -1e4;
        out.push_back(g);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Rotation estimators

Mat3 minimal_rotation(const Vec3 &from, const Vec3 &to) {
    const Vec3 a = from.normalized(), b = to.normalized();
    const Vec3 axis = a.cross(b);
    const double c = a.dot(b);
    if (axis.norm() < 1e-15) {
        if (c > 0.0) return Mat3::Identity();
        Vec3 perp = a.unitOrthogonal();
        return 2.0 * perp * perp.transpose() - Mat3::Identity();
    }
    Mat3 K;
    K << 0.0, -axis.z(), axis.y(), axis.z(), 0.0, -axis.x(), -axis.y(), axis.x(), 0.0;
    return Mat3::Identity() + K + K * K / (1.0 + c);
}

namespace {

bool triangle_normal(const Vec3 &x, const Vec3 &a, const Vec3 &b, Vec3 &n) {
    const Vec3 e1 = a - x, e2 = b - x;
    n = e1.cross(e2);
    const double scale = e1.norm() * e2.norm();
    if (!(scale > 0.0) || !(n.norm() > 1e-8 * scale)) return false;
    n.normalize();
    return true;
}

} // namespace

std::vector<BindingRecord> make_bindings(const std::vector<Vec3> &positions, std::size_t count,
                                         std::span<const Quat> rotations) {
    require(count <= positions.size(), ErrorCode::Contract, "binding count exceeds particle count");
    require(rotations.empty() || rotations.size() == count, ErrorCode::Contract, "one rotation per binding required");
    std::vector<BindingRecord> out(count);
    if (count == 0) return out;
    const geom::KdTree tree(std::vector<Vec3>(positions.begin(), positions.begin() + count));
    for (std::size_t i = 0; i < count; ++i) {
        BindingRecord &b = out[i];
        b.particle = i;
        if (!rotations.empty()) b.r0 = quat_to_matrix(rotations[i]);
        std::vector<std::size_t> nn = tree.knn(positions[i], 9);
        nn.erase(std::remove(nn.begin(), nn.end(), i), nn.end());
        b.degenerate = true;
        b.a = b.b = i;
        if (nn.empty()) continue;
        b.a = nn[0];
        // On lattices the two nearest can be collinear; take the next neighbour that spans a triangle.
        for (std::size_t c = 1; c < nn.size() && b.degenerate; ++c) {
            b.b = nn[c];
            b.degenerate = !triangle_normal(positions[i], positions[b.a], positions[b.b], b.n0);
        }
    }
    return out;
}

std::vector<Mat3> rotation_from_normals(const std::vector<Vec3> &positions, const std::vector<BindingRecord> &bindings) {
    std::vector<Mat3> out(bindings.size(), Mat3::Identity());
    for (std::size_t i = 0; i < bindings.size(); ++i) {
        const BindingRecord &b = bindings[i];
        if (b.degenerate) continue;
        Vec3 n;
        if (!triangle_normal(positions[b.particle], positions[b.a], positions[b.b], n)) continue;
        out[i] = minimal_rotation(b.n0, n);
    }
    return out;
}

Mat3 rotation_from_deformation(const Mat3 &F, DeformationConvention convention) {
    if (!F.allFinite()) {
        warn("non-finite deformation gradient; using identity rotation");
        return Mat3::Identity();
    }
    Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU();
    const Mat3 &V = svd.matrixV();
    if (U.determinant() * V.determinant() < 0.0) U.col(2) *= -1.0;
    return convention == DeformationConvention::UVt ? Mat3(U * V.transpose()) : Mat3(V * U.transpose());
}

// ---------------------------------------------------------------------------------------------
// Pipeline

SimResult simulate(const GaussianScene &scene, std::span<const std::size_t> sel, std::span<const int> material,
                   const std::vector<MaterialSpec> &bank, const SimConfig &cfg, int frames,
                   const std::function<void(int)> &progress) {
    require(frames >= 1, ErrorCode::Contract, "frames must be >= 1");
    require(cfg.fps > 0.0, ErrorCode::Contract, "fps must be positive");
    InfillResult inf = infill(scene, sel, material, bank, cfg);
    ParticleSystem &ps = inf.system;
    for (auto &p : ps.particles)
        p.v = bank[p.material].model == Model::Rigid ? cfg.rigid_velocity : cfg.initial_velocity;
    init_grid(ps, cfg);
    const double dt = default_dt(scene, cfg);

    std::vector<Vec3> positions;
    positions.reserve(ps.particles.size());
    for (const auto &p : ps.particles) positions.push_back(p.x);
    std::vector<Quat> q0;
    for (auto i : sel) q0.push_back(scene.rotations[i]);
    const std::vector<BindingRecord> bindings = make_bindings(positions, inf.bound, q0);

    SimResult out;
    out.particles = ps.particles.size();
    out.interior = inf.interior;
    out.frames.reserve(frames);
    out.frames.push_back(scene);
    if (progress) progress(0);
    for (int f = 1; f < frames; ++f) {
        advance(ps, cfg, 1.0 / cfg.fps, dt);
        for (std::size_t i = 0; i < ps.particles.size(); ++i) positions[i] = ps.particles[i].x;
        std::vector<Mat3> normal_rot;
        if (cfg.elastic_rotation == SimConfig::Rotation::Normals) normal_rot = rotation_from_normals(positions, bindings);

        GaussianScene frame = scene;
        for (std::size_t j = 0; j < inf.bound; ++j) {
            const Particle &p = ps.particles[j];
            const std::size_t gi = sel[j];
            frame.centroids[gi] = p.x;
            if (bank[p.material].model != Model::Elastic) continue;
            const Mat3 r1 = cfg.elastic_rotation == SimConfig::Rotation::Normals
                                ? normal_rot[j]
                                : rotation_from_deformation(p.F, DeformationConvention::UVt);
            frame.rotations[gi] = quat_normalized(quat_multiply(matrix_to_quat(r1), q0[j]));
        }
        if (cfg.emit_infill) {
            InfillResult moved;
            moved.bound = inf.bound;
            moved.voxel = inf.voxel;
            moved.system.particles = ps.particles;
            frame = with_infill_gaussians(frame, moved);
        }
        out.frames.push_back(std::move(frame));
        if (progress) progress(f);
    }
    return out;
}

} // namespace fsplat::physics
