// fsplat: command-line front end. Every failure prints one JSON error object on stderr.

#include "fsplat/bench.hpp"
#include "fsplat/camera.hpp"
#include "fsplat/config.hpp"
#include "fsplat/dataset.hpp"
#include "fsplat/decompose.hpp"
#include "fsplat/distill.hpp"
#include "fsplat/edit.hpp"
#include "fsplat/error.hpp"
#include "fsplat/gravity.hpp"
#include "fsplat/image.hpp"
#include "fsplat/physics.hpp"
#include "fsplat/rasterizer.hpp"
#include "fsplat/service.hpp"
#include "fsplat/synthetic.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace fsplat;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageExit = 64;
constexpr int kErrorExit = 1;

void print_error(std::string_view code, const std::string &message) {
    std::cerr << nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
}

nlohmann::json read_json(const fs::path &p) {
    std::ifstream f(p);
    if (!f) fail(ErrorCode::Io, "cannot open " + p.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error &e) {
        fail(ErrorCode::Format, p.string() + ": " + e.what());
    }
}

void write_text(const std::string &text, const std::string &out) {
    if (out.empty() || out == "-") {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) fail(ErrorCode::Io, "cannot write " + out);
    f << text;
}

Vec3 parse_vec3(const std::string &s, const char *what) {
    std::stringstream ss(s);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::logic_error &) {
            fail(ErrorCode::BadRequest, std::string(what) + " must be x,y,z");
        }
    }
    if (v.size() != 3) fail(ErrorCode::BadRequest, std::string(what) + " must be x,y,z");
    return {v[0], v[1], v[2]};
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, sep))
        if (!cell.empty()) out.push_back(cell);
    return out;
}

/// Selection files: {"indices": [...]} (as written by `segment`) or a bare array.
std::vector<std::size_t> load_selection(const fs::path &p, std::size_t scene_size) {
    const auto j = read_json(p);
    const auto &a = j.is_object() ? j.value("indices", nlohmann::json()) : j;
    if (!a.is_array()) fail(ErrorCode::Format, p.string() + ": expected an index array");
    std::vector<std::size_t> sel;
    for (const auto &v : a) {
        if (!v.is_number_unsigned()) fail(ErrorCode::Format, p.string() + ": indices must be non-negative integers");
        sel.push_back(v.get<std::size_t>());
    }
    std::sort(sel.begin(), sel.end());
    sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
    if (!sel.empty() && sel.back() >= scene_size) fail(ErrorCode::Contract, p.string() + ": index out of range");
    return sel;
}

/// Head whose CLIP branch maps one-hot object indicators onto the object words.
distill::DecodeHead ground_truth_head(const synthetic::SyntheticScene &syn) {
    const int K = int(syn.object_names.size());
    auto head = distill::DecodeHead::passthrough(K);
    const int clip_dim = int(syn.dataset.vocab.begin()->second.size());
    head.wc = Eigen::MatrixXd::Zero(clip_dim, K);
    head.bc = Eigen::VectorXd::Zero(clip_dim);
    for (int k = 0; k < K; ++k) head.wc.col(k) = syn.dataset.vocab.at(syn.object_names[k]);
    return head;
}

Vocabulary vocab_from(const std::string &vocab, const std::string &data) {
    if (!vocab.empty()) return load_vocab(vocab);
    if (!data.empty()) return load_vocab(fs::path(data) / "vocab.json");
    fail(ErrorCode::BadRequest, "pass --vocab or --data");
}

// ---------------------------------------------------------------------------------------------

struct Options {
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void cmd_synth(const std::string &out, int views, int size, double focal, int feature_dim, bool floor, int holdout,
               double clip_noise, double dino_noise, const Options &o) {
    synthetic::SyntheticConfig cfg;
    cfg.views = views;
    cfg.holdout = holdout;
    cfg.width = cfg.height = size;
    cfg.focal = focal > 0 ? focal : 0.9375 * size;
    cfg.feature_dim = feature_dim;
    cfg.clip_noise = clip_noise;
    cfg.dino_noise = dino_noise;
    cfg.seed = o.seed;
    if (!floor) cfg.objects.pop_back();
    const auto syn = synthetic::make_scene(cfg);
    const fs::path dir(out);
    save_dataset(syn.dataset, dir);
    save_scene(syn.initial, dir / "initial.fspl");
    save_scene(syn.ground_truth, dir / "ground_truth.fspl");
    distill::save_head(ground_truth_head(syn), dir / "ground_truth_head.bin");
    nlohmann::json labels{{"objects", syn.object_names},
                          {"ground_truth", syn.ground_truth_labels},
                          {"initial", syn.initial_labels}};
    write_text(labels.dump() + "\n", (dir / "labels.json").string());
    std::cout << nlohmann::json{{"dir", dir.string()},
                                {"views", views},
                                {"initial", syn.initial.size()},
                                {"ground_truth", syn.ground_truth.size()}}
                     .dump()
              << "\n";
}

void cmd_train(const std::string &data, const std::string &init, const std::string &out, const std::string &head_out,
               distill::TrainConfig cfg, const std::string &loss_csv, bool quiet, const Options &o) {
    const auto ds = load_dataset(data);
    const auto initial = load_scene(init);
    cfg.seed = o.seed;
    const auto result = distill::train(initial, ds, cfg, [&](const distill::IterationLog &l) {
        if (!quiet && (l.iteration % 500 == 0 || l.iteration == cfg.iterations))
            std::cerr << "iter " << l.iteration << " psnr " << l.psnr << " clip " << l.clip_loss << " n " << l.gaussians
                      << "\n";
    });
    save_scene(result.scene, out);
    if (!head_out.empty()) distill::save_head(result.head, head_out);
    if (!loss_csv.empty()) distill::write_loss_csv(result.history, loss_csv);
    const auto &last = result.history.back();
    std::cout << nlohmann::json{{"scene", out}, {"gaussians", result.scene.size()}, {"psnr", last.psnr}}.dump() << "\n";
}

void cmd_segment(const std::string &scene_path, const std::string &head_path, const Vocabulary &vocab,
                 const std::string &query, const std::string &negatives, double tau, double temperature, bool post,
                 const std::string &out, const std::string &overlay_path, const std::string &cameras_path, int view) {
    const auto scene = load_scene(scene_path);
    const auto head = distill::load_head(head_path);
    decompose::QuerySpec q;
    q.positive = query;
    if (!negatives.empty()) q.negatives = split(negatives, ',');
    q.tau = tau;
    q.temperature = temperature;
    q.validate();
    decompose::PostprocessConfig pc;
    pc.enabled = post;
    const auto sel = decompose::query(scene, head, vocab, q, pc);
    if (!overlay_path.empty()) {
        if (cameras_path.empty()) fail(ErrorCode::BadRequest, "--overlay needs --camera");
        const auto cams = load_cameras(cameras_path);
        if (view < 0 || view >= int(cams.size())) fail(ErrorCode::BadRequest, "view out of range");
        write_png(to_image8(decompose::overlay(scene, decompose::selection_weights(scene.size(), sel), cams[view])),
                  overlay_path);
    }
    write_text(nlohmann::json{{"query", query}, {"indices", sel.indices}, {"scores", sel.scores}}.dump() + "\n", out);
}

void cmd_edit(const std::string &scene_path, const std::string &script_path, const std::string &selection_path,
              const std::string &out, const std::string &provider, const std::string &target_color,
              const std::string &cameras_path, int iterations, double lr) {
    const auto scene = load_scene(scene_path);
    const auto script = edit::parse_script(read_json(script_path));
    std::vector<std::size_t> sel;
    if (!selection_path.empty()) sel = load_selection(selection_path, scene.size());
    auto result = edit::apply_script(scene, sel, script);
    if (!provider.empty() || !target_color.empty()) {
        if (cameras_path.empty()) fail(ErrorCode::BadRequest, "appearance editing needs --cameras");
        const auto cams = load_cameras(cameras_path);
        edit::AppearanceConfig ac;
        ac.iterations = iterations;
        ac.lr = lr;
        std::unique_ptr<edit::LossProvider> p;
        if (!provider.empty()) {
            p = std::make_unique<edit::SubprocessProvider>(split(provider, ' '));
        } else {
            std::vector<std::vector<std::uint8_t>> masks;
            for (const auto &c : cams) masks.push_back(edit::selection_mask(result.scene, result.selection, c));
            p = std::make_unique<edit::TargetColorProvider>(parse_vec3(target_color, "--target-color"), masks);
        }
        result.scene = edit::optimize_appearance(result.scene, result.selection, *p, cams, ac);
    }
    save_scene(result.scene, out);
    std::cout << nlohmann::json{{"scene", out}, {"gaussians", result.scene.size()}, {"selection", result.selection}}.dump()
              << "\n";
}

void cmd_simulate(const std::string &scene_path, const std::string &selection_path, const std::string &materials,
                  const std::string &default_material, const std::string &head_path, const std::string &vocab_path,
                  const std::string &data, const std::string &gravity, double gravity_magnitude, bool floor,
                  int frames, double fps, int grid_res, bool no_infill, const std::string &out_dir, const Options &o) {
    const auto scene = load_scene(scene_path);
    const auto sel = load_selection(selection_path, scene.size());
    if (sel.empty()) fail(ErrorCode::EmptySelection, "the selection is empty");
    const auto bank = physics::default_bank();
    physics::SimConfig cfg;
    cfg.fps = fps;
    cfg.grid_res = grid_res;
    cfg.infill = !no_infill;
    cfg.seed = o.seed;

    std::optional<distill::DecodeHead> head;
    std::optional<Vocabulary> vocab;
    auto need_head = [&] {
        if (!head) {
            if (head_path.empty()) fail(ErrorCode::BadRequest, "automatic materials and gravity need --head");
            head = distill::load_head(head_path);
            vocab = vocab_from(vocab_path, data);
        }
    };

    std::vector<int> material(sel.size());
    if (materials == "auto") {
        need_head();
        material = physics::assign_materials(scene, sel, *head, *vocab, bank, default_material);
    } else {
        std::fill(material.begin(), material.end(), int(physics::find_material(bank, materials)));
    }

    if (gravity == "auto") {
        need_head();
        const auto est = geom::estimate_floor(scene, *head, *vocab);
        cfg.gravity = gravity_magnitude * est.gravity;
        if (floor) cfg.planes = {physics::CollisionPlane{est.plane}};
    } else {
        const Vec3 dir = parse_vec3(gravity, "--gravity");
        cfg.gravity = dir.norm() > 0 ? Vec3(gravity_magnitude * dir.normalized()) : Vec3::Zero();
        if (floor && dir.norm() > 0) {
            const Vec3 down = dir.normalized();
            double lowest = -std::numeric_limits<double>::infinity();
            for (const auto &c : scene.centroids) lowest = std::max(lowest, c.dot(down));
            cfg.planes = {physics::CollisionPlane{geom::Plane{-down, -lowest}}};
        }
    }

    const auto result = physics::simulate(scene, sel, material, bank, cfg, frames, [](int f) {
        std::cerr << "frame " << f << "\n";
    });
    fs::create_directories(out_dir);
    for (std::size_t f = 0; f < result.frames.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.fspl", f);
        save_scene(result.frames[f], fs::path(out_dir) / name);
    }
    std::cout << nlohmann::json{{"frames", result.frames.size()},
                                {"particles", result.particles},
                                {"interior", result.interior},
                                {"gravity", {cfg.gravity.x(), cfg.gravity.y(), cfg.gravity.z()}},
                                {"out_dir", out_dir}}
                     .dump()
              << "\n";
}

void cmd_render(const std::string &scene_path, const std::string &cameras_path, int view, const std::string &out,
                bool pca) {
    const auto scene = load_scene(scene_path);
    const auto cams = load_cameras(cameras_path);
    if (view < 0 || view >= int(cams.size())) fail(ErrorCode::BadRequest, "view out of range");
    raster::RasterConfig rc;
    rc.render_features = pca;
    const auto t = raster::rasterize(scene, cams[view], rc);
    write_png(to_image8(pca ? raster::render_feature_pca(t) : t.color_image()), out);
}

void cmd_bench(bench::BenchConfig cfg, const std::string &dims, const std::string &out, const Options &o) {
    if (!dims.empty()) {
        cfg.dims.clear();
        for (const auto &d : split(dims, ',')) {
            try {
                cfg.dims.push_back(std::stoi(d));
            } catch (const std::logic_error &) {
                fail(ErrorCode::BadRequest, "--dims must be comma-separated integers");
            }
        }
    }
    cfg.seed = o.seed;
    write_text(bench::to_csv(bench::run_bench(cfg)), out);
}

service::Service *g_service = nullptr;

void cmd_serve(const std::string &config_path, int port, const std::string &host, const Options &o) {
    auto sc = load_service_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path));
    if (port >= 0) sc.port = port;
    if (!host.empty()) sc.host = host;
    service::ServiceInputs in;
    in.scene = load_scene(sc.path_of(sc.scene));
    in.head = distill::load_head(sc.path_of(sc.head));
    in.vocab = load_vocab(sc.path_of(sc.vocab));
    in.cameras = load_cameras(sc.path_of(sc.cameras));
    in.sim.grid_res = sc.grid_res;
    in.sim.fps = sc.fps;
    in.sim.seed = o.seed_set ? o.seed : sc.seed;
    in.gravity_magnitude = sc.gravity;
    in.default_material = sc.default_material;
    in.threads = sc.threads;
    physics::find_material(in.bank, in.default_material);
    service::Service svc(std::move(in));
    g_service = &svc;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    std::cerr << "serving on http://" << sc.host << ":" << sc.port << "\n";
    svc.run(sc.host, sc.port);
    g_service = nullptr;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"fsplat: feature Gaussian scenes: distill, query, edit, simulate, render, serve"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--seed", o.seed, "Seed for every random generator")->each([&](const std::string &) { o.seed_set = true; });

    std::function<void()> run;

    // synth
    auto *synth = app.add_subcommand("synth", "Write the procedural two- or three-object dataset");
    std::string s_out;
    int s_views = 8, s_size = 96, s_fdim = 32, s_holdout = 0;
    double s_focal = 0, s_clip_noise = 0, s_dino_noise = 0;
    bool s_no_floor = false;
    synth->add_option("--out", s_out, "Output directory")->required();
    synth->add_option("--views", s_views);
    synth->add_option("--size", s_size, "Image width and height");
    synth->add_option("--focal", s_focal, "Focal length in pixels (default 0.94 * size)");
    synth->add_option("--feature-dim", s_fdim, "Feature width of the initial scene");
    synth->add_option("--holdout", s_holdout, "Trailing views kept for validation");
    synth->add_option("--clip-noise", s_clip_noise);
    synth->add_option("--dino-noise", s_dino_noise);
    synth->add_flag("--no-floor", s_no_floor);
    synth->callback([&] {
        run = [&] { cmd_synth(s_out, s_views, s_size, s_focal, s_fdim, !s_no_floor, s_holdout, s_clip_noise, s_dino_noise, o); };
    });

    // train
    auto *train = app.add_subcommand("train", "Optimize a scene and its feature head against a dataset");
    std::string t_data, t_init, t_out, t_head, t_csv;
    distill::TrainConfig tcfg;
    bool t_no_features = false, t_quiet = false;
    train->add_option("--data", t_data, "Dataset directory")->required();
    train->add_option("--init", t_init, "Initial scene")->required();
    train->add_option("--out", t_out, "Output scene")->required();
    train->add_option("--head-out", t_head, "Output decode head");
    train->add_option("--iterations", tcfg.iterations);
    train->add_option("--feature-iterations", tcfg.feature_iterations);
    train->add_option("--lambda-dino", tcfg.lambda_dino);
    train->add_option("--lr-feature", tcfg.lr_feature);
    train->add_option("--densify-until", tcfg.densify_until);
    train->add_option("--threads", tcfg.threads);
    train->add_option("--loss-csv", t_csv);
    train->add_flag("--no-features", t_no_features, "Color-only training");
    train->add_flag("--quiet", t_quiet);
    train->callback([&] {
        tcfg.feature_learning = !t_no_features;
        run = [&] { cmd_train(t_data, t_init, t_out, t_head, tcfg, t_csv, t_quiet, o); };
    });

    // segment
    auto *segment = app.add_subcommand("segment", "Select the Gaussians matching a text query");
    std::string g_scene, g_head, g_vocab, g_data, g_query, g_neg, g_out, g_overlay, g_cams;
    double g_tau = 0.6, g_temp = 0.1;
    bool g_raw = false;
    int g_view = 0;
    segment->add_option("--scene", g_scene)->required();
    segment->add_option("--head", g_head)->required();
    segment->add_option("--vocab", g_vocab);
    segment->add_option("--data", g_data, "Dataset directory holding vocab.json");
    segment->add_option("--query", g_query)->required();
    segment->add_option("--negatives", g_neg, "Comma-separated (default objects,things)");
    segment->add_option("--tau", g_tau);
    segment->add_option("--temperature", g_temp);
    segment->add_flag("--no-postprocess", g_raw, "Skip hole closing, outlier removal and negative subtraction");
    segment->add_option("--overlay", g_overlay, "Write a PNG with the selection tinted red");
    segment->add_option("--camera", g_cams, "cameras.json for --overlay");
    segment->add_option("--view", g_view, "Camera index for --overlay");
    segment->add_option("--out", g_out, "Output JSON (default stdout)");
    segment->callback([&] {
        run = [&] { cmd_segment(g_scene, g_head, vocab_from(g_vocab, g_data), g_query, g_neg, g_tau, g_temp, !g_raw, g_out, g_overlay, g_cams, g_view); };
    });

    // edit
    auto *editc = app.add_subcommand("edit", "Apply an edit script to a selection");
    std::string e_scene, e_script, e_sel, e_out, e_provider, e_color, e_cams;
    int e_iters = 2500;
    double e_lr = 2.5e-3;
    editc->add_option("--scene", e_scene)->required();
    editc->add_option("--script", e_script, "Edit script JSON")->required();
    editc->add_option("--selection", e_sel, "Selection JSON");
    editc->add_option("--out", e_out)->required();
    editc->add_option("--provider", e_provider, "Loss provider command line for appearance editing");
    editc->add_option("--target-color", e_color, "Built-in provider: r,g,b target inside the selection");
    editc->add_option("--cameras", e_cams);
    editc->add_option("--iterations", e_iters);
    editc->add_option("--lr", e_lr);
    editc->callback([&] { run = [&] { cmd_edit(e_scene, e_script, e_sel, e_out, e_provider, e_color, e_cams, e_iters, e_lr); }; });

    // simulate
    auto *sim = app.add_subcommand("simulate", "Run MPM dynamics on a selection and write frames");
    std::string m_scene, m_sel, m_mat = "elastic", m_default = "elastic", m_head, m_vocab, m_data, m_grav = "auto", m_out;
    double m_gmag = 9.8, m_fps = 24.0;
    int m_frames = 24, m_grid = 48;
    bool m_no_floor = false, m_no_infill = false;
    sim->add_option("--scene", m_scene)->required();
    sim->add_option("--selection", m_sel)->required();
    sim->add_option("--materials", m_mat, "Bank material name, or auto");
    sim->add_option("--default-material", m_default, "Non-rigid material under --materials auto");
    sim->add_option("--head", m_head);
    sim->add_option("--vocab", m_vocab);
    sim->add_option("--data", m_data);
    sim->add_option("--gravity", m_grav, "auto, or a direction x,y,z");
    sim->add_option("--gravity-magnitude", m_gmag);
    sim->add_flag("--no-floor", m_no_floor, "No collision plane");
    sim->add_flag("--no-infill", m_no_infill, "Surface particles only");
    sim->add_option("--frames", m_frames);
    sim->add_option("--fps", m_fps);
    sim->add_option("--grid-res", m_grid);
    sim->add_option("--out-dir", m_out)->required();
    sim->callback([&] {
        run = [&] {
            cmd_simulate(m_scene, m_sel, m_mat, m_default, m_head, m_vocab, m_data, m_grav, m_gmag, !m_no_floor, m_frames,
                         m_fps, m_grid, m_no_infill, m_out, o);
        };
    });

    // render
    auto *render = app.add_subcommand("render", "Render one view to PNG");
    std::string r_scene, r_cams, r_out;
    int r_view = 0;
    bool r_pca = false;
    render->add_option("--scene", r_scene)->required();
    render->add_option("--camera", r_cams, "cameras.json")->required();
    render->add_option("--view", r_view);
    render->add_option("--out", r_out)->required();
    render->add_flag("--features", r_pca, "Render a PCA view of the features");
    render->callback([&] { run = [&] { cmd_render(r_scene, r_cams, r_view, r_out, r_pca); }; });

    // bench
    auto *benchc = app.add_subcommand("bench", "Time forward and backward passes per feature width");
    bench::BenchConfig bcfg;
    std::string b_dims, b_out;
    bool b_both_only = false;
    benchc->add_option("--dims", b_dims, "Comma-separated feature widths (default 0,32,256,768)");
    benchc->add_option("--reps", bcfg.reps);
    benchc->add_option("--warmup", bcfg.warmup);
    benchc->add_option("--gaussians", bcfg.gaussians);
    benchc->add_option("--size", bcfg.width, "Image width and height");
    benchc->add_flag("--both-only", b_both_only, "Only both-on and both-off toggles");
    benchc->add_option("--out", b_out, "CSV path (default stdout)");
    benchc->callback([&] {
        bcfg.height = bcfg.width;
        bcfg.all_toggles = !b_both_only;
        run = [&] { cmd_bench(bcfg, b_dims, b_out, o); };
    });

    // serve
    auto *serve = app.add_subcommand("serve", "Serve the HTTP API");
    std::string v_cfg, v_host;
    int v_port = -1;
    serve->add_option("--config", v_cfg, "TOML config file");
    serve->add_option("--port", v_port);
    serve->add_option("--host", v_host);
    serve->callback([&] { run = [&] { cmd_serve(v_cfg, v_port, v_host, o); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << app.help();
        print_error("usage", e.what());
        return kUsageExit;
    }
    try {
        run();
    } catch (const Error &e) {
        print_error(to_string(e.code()), e.what());
        return kErrorExit;
    } catch (const std::exception &e) {
        print_error("internal", e.what());
        return kErrorExit;
    }
    return 0;
}
