#pragma once

// Small procedural scenes shared by unit and acceptance tests.

#include "fsplat/physics.hpp"
#include "fsplat/scene.hpp"
#include "fsplat/types.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace fixture {

using fsplat::GaussianScene;
using fsplat::Mat3;
using fsplat::Vec3;

/// Flat, opaque disks tangent to a sphere, on a Fibonacci lattice.
inline GaussianScene sphere_shell(int n, double radius, const Vec3 &center, int feature_dim = 0,
                                  double opacity = 0.9) {
    GaussianScene s(0, feature_dim);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double spacing = std::sqrt(4.0 * std::numbers::pi * radius * radius / n);
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(1.0 - z * z);
        const Vec3 normal(r * std::cos(golden * i), r * std::sin(golden * i), z);
        fsplat::Gaussian g;
        g.centroid = center + radius * normal;
        g.rotation = fsplat::matrix_to_quat(fsplat::physics::minimal_rotation(Vec3::UnitZ(), normal));
        g.log_scale = Vec3(std::log(0.6 * spacing), std::log(0.6 * spacing), std::log(0.1 * spacing));
        g.opacity_logit = fsplat::inverse_sigmoid(opacity);
        g.sh = {Vec3(0.5, 0.3, 0.2)};
        s.push_back(g);
    }
    return s;
}

/// Square sheet of flat Gaussians in the z = height plane, `n` x `n` lattice over [-half, half]^2.
inline GaussianScene sheet(int n, double half, double height = 0.0, int feature_dim = 0) {
    GaussianScene s(0, feature_dim);
    const double step = 2.0 * half / (n - 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            fsplat::Gaussian g;
            g.centroid = Vec3(-half + i * step, -half + j * step, height);
            g.log_scale = Vec3(std::log(0.6 * step), std::log(0.6 * step), std::log(0.1 * step));
            g.opacity_logit = fsplat::inverse_sigmoid(0.9);
            g.sh = {Vec3(0.2, 0.4, 0.6)};
            s.push_back(g);
        }
    return s;
}

/// Random ball of particles with a common drift, for conservation checks.
inline fsplat::physics::ParticleSystem blob(std::uint64_t seed, fsplat::physics::Model model, int n = 200) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    fsplat::physics::ParticleSystem ps;
    ps.materials = fsplat::physics::default_bank();
    const int mat = model == fsplat::physics::Model::Elastic ? 1 : model == fsplat::physics::Model::Granular ? 2 : 3;
    const Vec3 drift(0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng));
    while (int(ps.particles.size()) < n) {
        const Vec3 x(u(rng), u(rng), u(rng));
        if (x.norm() > 1.0) continue;
        fsplat::physics::Particle p;
        p.x = 0.1 * x;
        p.v = drift + 0.2 * Vec3(u(rng), u(rng), u(rng));
        p.volume = 1e-6;
        p.mass = 1e3 * p.volume * (0.5 + 0.5 * std::abs(u(rng)));
        p.material = mat;
        ps.particles.push_back(p);
    }
    return ps;
}

inline std::vector<std::size_t> all_indices(const GaussianScene &s) {
    std::vector<std::size_t> v(s.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

} // namespace fixture
