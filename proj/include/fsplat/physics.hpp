#pragma once

#include "fsplat/dataset.hpp"
#include "fsplat/distill.hpp"
#include "fsplat/geom.hpp"
#include "fsplat/scene.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsplat::physics {

enum class Model { Rigid, Elastic, Granular, Liquid };

std::string_view to_string(Model m);
Model model_from_string(const std::string &s); // Error(BadRequest) on unknown names

struct MaterialSpec {
    std::string name;
    Model model = Model::Elastic;
    double density = 1e3;
    double youngs = 1e5;
    double poisson = 0.3;
    double friction_angle = 30.0; // degrees, granular
    double bulk = 1e5;            // liquid
    std::vector<std::string> aliases;

    /// Throws Error(Contract) unless density > 0, E > 0, 0 <= nu < 0.5, bulk > 0.
    void validate() const;
    double mu() const { return youngs / (2.0 * (1.0 + poisson)); }
    double lambda() const { return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)); }
};

/// rigid (wood, ceramic, steel), elastic, sand (granular), water (liquid).
std::vector<MaterialSpec> default_bank();
/// Index of the material whose name or alias is `name`; Error(BadRequest) if none.
std::size_t find_material(const std::vector<MaterialSpec> &bank, const std::string &name);

struct Particle {
    Vec3 x = Vec3::Zero();
    Vec3 v = Vec3::Zero();
    double mass = 1.0;
    double volume = 1.0;
    Mat3 F = Mat3::Identity();
    Mat3 C = Mat3::Zero();
    double J = 1.0;            // liquid volume ratio
    int material = 0;          // index into ParticleSystem::materials
    std::int64_t binding = -1; // source Gaussian, or -1 for infill
    bool transparent = false;
};

struct CollisionPlane {
    geom::Plane plane;     // material lives on the positive side
    double friction = 0.4; // Coulomb coefficient on the tangential grid velocity
};

struct SimConfig {
    int grid_res = 64;
    double padding = 0.25;      // fraction of the particle extent added around the domain
    std::optional<std::pair<Vec3, Vec3>> domain; // overrides the automatic domain
    double dt = 0.0;            // <= 0: 1e-4 * scene scale
    double fps = 24.0;
    Vec3 gravity = Vec3(0.0, 0.0, -9.8);
    std::vector<CollisionPlane> planes;
    double cfl = 0.5;           // dt * max|v| < cfl * dx
    int max_subdivisions = 4;
    double damping = 0.0;       // per-second exponential decay of grid velocity

    // infill
    bool infill = true;
    int infill_grid_res = 32;
    int samples_per_gaussian = 8;
    double surface_opacity = 0.1;

    enum class Rotation { Normals, Deformation };
    Rotation elastic_rotation = Rotation::Normals;
    Vec3 initial_velocity = Vec3::Zero(); // non-rigid particles
    Vec3 rigid_velocity = Vec3::Zero();   // scripted velocity of rigid particles
    bool emit_infill = false;             // append transparent infill Gaussians to frames
    std::uint64_t seed = 0;
};

/// Background grid over an axis-aligned cube.
struct Grid {
    Vec3 origin = Vec3::Zero();
    double dx = 1.0;
    int res = 0;
    std::vector<Vec3> momentum; // velocity after update
    std::vector<double> mass;
    std::vector<Vec3> kinematic_v;
    std::vector<double> kinematic_w;
    std::vector<std::uint32_t> active;

    void init(const Vec3 &origin, double dx, int res);
    std::size_t index(int i, int j, int k) const { return (std::size_t(i) * res + j) * res + k; }
};

struct ParticleSystem {
    std::vector<Particle> particles;
    std::vector<MaterialSpec> materials;
    Grid grid;
    double time = 0.0;
    double last_grid_mass = 0.0; // grid mass after the most recent P2G

    double particle_mass() const; // non-rigid particles
    Vec3 momentum() const;        // non-rigid particles
    double max_speed() const;
};

/// Sets up the grid for the given particles (automatic domain unless cfg.domain is set).
void init_grid(ParticleSystem &ps, const SimConfig &cfg);

/// One MLS-MPM substep: P2G with quadratic B-splines and APIC, grid update with gravity,
/// damping and plane collisions, G2P, deformation update and return mapping. Rigid particles
/// act as kinematic boundary conditions. Throws Error(Cfl) if dt * max|v| >= cfl * dx.
void step(ParticleSystem &ps, const SimConfig &cfg, double dt);

/// Runs `duration` of simulated time in substeps of at most cfg dt, halving the substep up to
/// max_subdivisions times when the CFL condition fails.
void advance(ParticleSystem &ps, const SimConfig &cfg, double duration, double dt);

double default_dt(const GaussianScene &scene, const SimConfig &cfg);

// ---------------------------------------------------------------------------------------------
// Materials and particles

/// Per selected Gaussian (parallel to `sel`), the bank index: rigid where the decoded feature
/// matches a rigid alias (the decompose softmax restricted to `sel`), `default_material` elsewhere.
std::vector<int> assign_materials(const GaussianScene &scene, std::span<const std::size_t> sel,
                                  const distill::DecodeHead &head, const Vocabulary &vocab,
                                  const std::vector<MaterialSpec> &bank, const std::string &default_material,
                                  double tau = 0.6, double temperature = 0.1);

struct InfillResult {
    ParticleSystem system;
    std::size_t bound = 0;    // particles [0, bound) sit on the selected Gaussians, in order
    std::size_t surface = 0;  // then disk samples
    std::size_t interior = 0; // then transparent interior particles
    double voxel = 0.0;       // infill voxel edge
    Vec3 voxel_origin = Vec3::Zero();
};

/// Builds particles for the selection: one per selected Gaussian, disk samples on surface
/// Gaussians, and (when cfg.infill) transparent particles at interior voxel centres. A voxel is
/// interior when axis rays in at least 5 of the 6 directions reach an occupied voxel.
InfillResult infill(const GaussianScene &scene, std::span<const std::size_t> sel, std::span<const int> material,
                    const std::vector<MaterialSpec> &bank, const SimConfig &cfg);

// ---------------------------------------------------------------------------------------------
// Rotation estimators

struct BindingRecord {
    std::size_t particle = 0;
    std::size_t a = 0, b = 0; // neighbour particles
    Vec3 n0 = Vec3::UnitZ();
    Mat3 r0 = Mat3::Identity();
    bool degenerate = false;
};

/// For every particle in [0, count): its nearest neighbour, the next nearest that is not collinear
/// with it (among the 8 nearest), and the initial triangle normal. `r0` holds the activated rotation of `rotations[i]` when given.
std::vector<BindingRecord> make_bindings(const std::vector<Vec3> &positions, std::size_t count,
                                         std::span<const Quat> rotations = {});

/// Minimal rotation carrying n0 onto the current triangle normal (same vertex order); identity for
/// degenerate triangles.
std::vector<Mat3> rotation_from_normals(const std::vector<Vec3> &positions, const std::vector<BindingRecord> &bindings);

enum class DeformationConvention {
    VUt, // R = V U^T, the transposed form
    UVt, // R = U V^T, the polar rotation of F
};

/// Rotation factor of F with det +1; identity (and a warning) for non-finite F.
Mat3 rotation_from_deformation(const Mat3 &F, DeformationConvention convention = DeformationConvention::UVt);

/// Smallest rotation taking unit vector `from` onto `to` (about from x to).
Mat3 minimal_rotation(const Vec3 &from, const Vec3 &to);

// ---------------------------------------------------------------------------------------------
// Full pipeline

struct SimResult {
    std::vector<GaussianScene> frames; // frames[0] is the input scene
    std::size_t particles = 0;
    std::size_t interior = 0;
};

/// Simulates the selection with the given per-selected-Gaussian materials; unselected Gaussians
/// stay put. `progress(frame)` is called after every frame.
SimResult simulate(const GaussianScene &scene, std::span<const std::size_t> sel, std::span<const int> material,
                   const std::vector<MaterialSpec> &bank, const SimConfig &cfg, int frames,
                   const std::function<void(int)> &progress = {});

/// Appends the transparent infill particles as Gaussians that never render.
GaussianScene with_infill_gaussians(const GaussianScene &scene, const InfillResult &infill);

} // namespace fsplat::physics
