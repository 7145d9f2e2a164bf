#include "fsplat/bench.hpp"

#include "fsplat/error.hpp"
#include "fsplat/rasterizer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace fsplat::bench {

namespace {

constexpr const char *kHeader =
    "dim,tile_buffer,half_features,reps,forward_ms,forward_std_ms,backward_ms,backward_std_ms,total_ms,total_std_ms";

std::pair<double, double> mean_std(const std::vector<double> &v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(s / double(v.size() - 1)) : 0.0};
}

} // namespace

Camera bench_camera(int width, int height) {
    return Camera::look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 0.9 * width, 0.9 * width, width, height);
}

GaussianScene bench_scene(int gaussians, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianScene s(1, dim);
    s.reserve(gaussians);
    for (int i = 0; i < gaussians; ++i) {
        Gaussian g;
        g.centroid = Vec3(u(rng), u(rng), 0.5 * u(rng));
        g.log_scale = Vec3::Constant(std::log(0.05)) + 0.3 * Vec3(u(rng), u(rng), u(rng));
        g.rotation = quat_normalized(Quat(u(rng), u(rng), u(rng), u(rng)));
        g.opacity_logit = 1.0 + u(rng);
        for (int k = 0; k < 4; ++k) g.sh.emplace_back(0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng));
        for (int k = 0; k < dim; ++k) g.feature.push_back(Half(float(u(rng))));
        s.push_back(g);
    }
    return s;
}

std::vector<BenchRow> run_bench(const BenchConfig &cfg) {
    require(cfg.reps >= 2 && cfg.warmup >= 0 && cfg.gaussians > 0 && !cfg.dims.empty(), ErrorCode::Contract,
            "bench needs at least two reps, a scene and feature dims");
    const Camera cam = bench_camera(cfg.width, cfg.height);
    std::vector<std::pair<bool, bool>> toggles{{true, true}, {false, false}};
    if (cfg.all_toggles) toggles = {{true, true}, {true, false}, {false, true}, {false, false}};

    std::vector<BenchRow> rows;
    for (int dim : cfg.dims) {
        require(dim >= 0, ErrorCode::Contract, "feature dims must be non-negative");
        const GaussianScene scene = bench_scene(cfg.gaussians, dim, cfg.seed);
        const std::vector<float> f32(scene.features.begin(), scene.features.end());
        std::mt19937_64 rng(cfg.seed + 1);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t npix = std::size_t(cfg.width) * cfg.height;
        std::vector<double> dc(npix * 3), df(npix * dim);
        for (auto &x : dc) x = u(rng);
        for (auto &x : df) x = u(rng);

        for (const auto &[tile, half] : toggles) {
            raster::RasterConfig rc;
            rc.tile_gradient_buffer = tile;
            rc.render_features = dim > 0;
            rc.max_feature_dim = std::max(rc.max_feature_dim, dim);
            std::vector<double> fwd, bwd, tot;
            for (int it = 0; it < cfg.warmup + cfg.reps; ++it) {
                using clock = std::chrono::steady_clock;
                const auto t0 = clock::now();
                const auto target = half ? raster::rasterize(scene, cam, rc) : raster::rasterize(scene, f32, cam, rc);
                const auto t1 = clock::now();
                const auto g = half ? raster::rasterize_backward(scene, cam, target, dc, df, rc)
                                    : raster::rasterize_backward(scene, f32, cam, target, dc, df, rc);
                const auto t2 = clock::now();
                if (g.centroid.size() != scene.size()) fail(ErrorCode::Contract, "backward size mismatch");
                if (it < cfg.warmup) continue;
                fwd.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                bwd.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
                tot.push_back(fwd.back() + bwd.back());
            }
            BenchRow r;
            r.dim = dim;
            r.tile_buffer = tile;
            r.half_features = half;
            r.reps = cfg.reps;
            std::tie(r.forward_ms, r.forward_std_ms) = mean_std(fwd);
            std::tie(r.backward_ms, r.backward_std_ms) = mean_std(bwd);
            std::tie(r.total_ms, r.total_std_ms) = mean_std(tot);
            rows.push_back(r);
        }
    }
    return rows;
}

std::string to_csv(const std::vector<BenchRow> &rows) {
    std::ostringstream out;
    out << kHeader << '\n' << std::setprecision(17);
    for (const auto &r : rows)
        out << r.dim << ',' << int(r.tile_buffer) << ',' << int(r.half_features) << ',' << r.reps << ',' << r.forward_ms
            << ',' << r.forward_std_ms << ',' << r.backward_ms << ',' << r.backward_std_ms << ',' << r.total_ms << ','
            << r.total_std_ms << '\n';
    return out.str();
}

std::vector<BenchRow> parse_csv(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) fail(ErrorCode::Format, "bench CSV has an unexpected header");
    std::vector<BenchRow> rows;
    int n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 10) fail(ErrorCode::Format, "bench CSV line " + std::to_string(n) + " needs 10 fields");
        try {
            BenchRow r;
            std::size_t used = 0;
            auto integer = [&](const std::string &s) {
                const int v = std::stoi(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            };
            auto real = [&](const std::string &s) {
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            };
            r.dim = integer(cells[0]);
            r.tile_buffer = integer(cells[1]) != 0;
            r.half_features = integer(cells[2]) != 0;
            r.reps = integer(cells[3]);
            r.forward_ms = real(cells[4]);
            r.forward_std_ms = real(cells[5]);
            r.backward_ms = real(cells[6]);
            r.backward_std_ms = real(cells[7]);
            r.total_ms = real(cells[8]);
            r.total_std_ms = real(cells[9]);
            rows.push_back(r);
        } catch (const std::logic_error &) {
            fail(ErrorCode::Format, "bench CSV line " + std::to_string(n) + " is malformed");
        }
    }
    return rows;
}

} // namespace fsplat::bench
