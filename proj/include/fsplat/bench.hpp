#pragma once

#include "fsplat/camera.hpp"
#include "fsplat/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fsplat::bench {

struct BenchConfig {
    std::vector<int> dims{0, 32, 256, 768};
    int reps = 20;
    int warmup = 3;
    int gaussians = 1000;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;
    /// Both toggles on and both off when false; all four combinations when true.
    bool all_toggles = true;
};

struct BenchRow {
    int dim = 0;
    bool tile_buffer = true;   // per-tile gradient staging in the backward pass
    bool half_features = true; // features read from half storage (else a float copy)
    int reps = 0;
    double forward_ms = 0.0, forward_std_ms = 0.0;
    double backward_ms = 0.0, backward_std_ms = 0.0;
    double total_ms = 0.0, total_std_ms = 0.0;
};

/// Random Gaussians in front of `bench_camera`, features of width `dim`.
GaussianScene bench_scene(int gaussians, int dim, std::uint64_t seed);
Camera bench_camera(int width, int height);

/// Forward + backward wall time per iteration for every dim and toggle combination, after
/// `warmup` untimed iterations. Sample standard deviations.
std::vector<BenchRow> run_bench(const BenchConfig &cfg);

std::string to_csv(const std::vector<BenchRow> &rows);
/// Throws Error(Format) on a bad header or row.
std::vector<BenchRow> parse_csv(const std::string &text);

} // namespace fsplat::bench
