#pragma once

// Procedural scenes with known object membership, used in place of captured data.

#include "fsplat/dataset.hpp"
#include "fsplat/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fsplat::synthetic {

enum class Shape { Sphere, Box, Floor };

struct ObjectSpec {
    std::string name; // vocabulary word
    Shape shape = Shape::Sphere;
    Vec3 center = Vec3::Zero();
    double size = 0.3; // sphere radius, box half-edge, floor half-width
    Vec3 color = Vec3(0.5, 0.5, 0.5);
};

struct SyntheticConfig {
    std::vector<ObjectSpec> objects = default_objects();
    int views = 8;
    int holdout = 0; // last `holdout` views become validation views
    int width = 96;
    int height = 96;
    double focal = 90.0;
    double orbit_radius = 3.2;
    int clip_dim = 16;
    int dino_dim = 8;
    int clip_downsample = 4;
    int dino_downsample = 2;
    double generic_weight = 0.3; // share of "objects" + "things" in every object's image embedding
    double clip_noise = 0.0; // per-view i.i.d. noise on the coarse CLIP maps
    double dino_noise = 0.0;
    double spacing = 0.07;   // surface sample spacing of the ground-truth Gaussians
    int sh_degree = 1;       // of the initial training scene
    int feature_dim = 32;    // of the initial training scene
    double init_jitter = 0.02;
    double init_feature_noise = 0.01;
    std::uint64_t seed = 0;

    static std::vector<ObjectSpec> default_objects();
};

struct SyntheticScene {
    FeatureDataset dataset;
    std::vector<std::string> object_names;
    /// Ground truth: features are one-hot object indicators (feature_dim = object count).
    GaussianScene ground_truth;
    std::vector<int> ground_truth_labels;
    /// Jittered, grey, low-opacity copies of the ground-truth Gaussians seen by two or more
    /// training views; labels follow ground truth.
    GaussianScene initial;
    std::vector<int> initial_labels;
};

/// Extra vocabulary entries every synthetic vocabulary carries besides the object names.
const std::vector<std::string> &filler_words();

SyntheticScene make_scene(const SyntheticConfig &cfg = {});

/// Surface Gaussians of one object, appended to `out` (one-hot features of width `feature_dim`
/// at `label` when label >= 0, zeros otherwise).
void add_object(GaussianScene &out, const ObjectSpec &obj, double spacing, int label, std::uint64_t seed);

/// Per-pixel mask of where object `label` is the dominant visible contributor.
BinaryMask object_mask(const GaussianScene &ground_truth, const Camera &cam, int label);

/// Total compositing weight sum_p alpha_i T_i of each Gaussian in one view (0 when its red
/// channel is clamped).
std::vector<double> visibility(const GaussianScene &scene, const Camera &cam);

/// Cameras on a circle around the origin, alternating between two elevations.
std::vector<Camera> orbit_cameras(int count, int width, int height, double focal, double radius);

} // namespace fsplat::synthetic
