#include "fsplat/service.hpp"

#include "fsplat/decompose.hpp"
#include "fsplat/edit.hpp"
#include "fsplat/error.hpp"
#include "fsplat/gravity.hpp"
#include "fsplat/image.hpp"
#include "fsplat/rasterizer.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <sstream>
#include <thread>

namespace fsplat::service {

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::BadRequest:
    case ErrorCode::UnknownVocabulary:
    case ErrorCode::Contract:
    case ErrorCode::Format:
    case ErrorCode::EmptySelection:
    case ErrorCode::Degenerate:
    case ErrorCode::Validation:
        return 400;
    case ErrorCode::UnknownRevision:
        return 404;
    case ErrorCode::Busy:
        return 409;
    default:
        return 500;
    }
}

nlohmann::json error_body(ErrorCode code, const std::string &message) {
    return {{"error", {{"code", std::string(to_string(code))}, {"message", message}}}};
}

namespace {

struct Revision {
    int id = 0;
    int parent = -1;
    std::string op;
    std::shared_ptr<const GaussianScene> scene;
    std::shared_ptr<const std::vector<GaussianScene>> frames; // simulation output, frames[0] is the parent scene
};

struct Job {
    int id = 0;
    std::string status = "running"; // running | done | failed
    int progress = 0;
    int frames = 0;
    int revision = -1;
    int source_revision = -1;
    std::optional<nlohmann::json> error;
};

struct Cancelled {};

Vec3 vec3_of(const nlohmann::json &j, const char *what) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::BadRequest, std::string(what) + " must be a 3-vector");
    Vec3 v;
    for (int k = 0; k < 3; ++k) {
        if (!j[k].is_number()) fail(ErrorCode::BadRequest, std::string(what) + " must be numeric");
        v[k] = j[k].get<double>();
    }
    if (!v.allFinite()) fail(ErrorCode::BadRequest, std::string(what) + " must be finite");
    return v;
}

Vec3 vec3_param(const std::string &s, const char *what) {
    std::stringstream ss(s);
    std::string cell;
    nlohmann::json a = nlohmann::json::array();
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            a.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::logic_error &) {
            fail(ErrorCode::BadRequest, std::string(what) + " must be three comma-separated numbers");
        }
    }
    return vec3_of(a, what);
}

double number_param(const httplib::Request &req, const char *name, double fallback) {
    if (!req.has_param(name)) return fallback;
    try {
        std::size_t used = 0;
        const std::string s = req.get_param_value(name);
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error &) {
        fail(ErrorCode::BadRequest, std::string("query parameter ") + name + " must be a number");
    }
}

int int_param(const httplib::Request &req, const char *name, int fallback) {
    const double v = number_param(req, name, fallback);
    if (v != std::floor(v)) fail(ErrorCode::BadRequest, std::string("query parameter ") + name + " must be an integer");
    return int(v);
}

std::vector<std::string> list_param(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ','))
        if (!cell.empty()) out.push_back(cell);
    return out;
}

std::vector<std::size_t> selection_of(const nlohmann::json &j, std::size_t scene_size) {
    if (j.is_null()) return {};
    if (!j.is_array()) fail(ErrorCode::BadRequest, "selection must be an array of indices");
    std::vector<std::size_t> sel;
    for (const auto &v : j) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(ErrorCode::BadRequest, "selection entries must be non-negative integers");
        sel.push_back(v.get<std::size_t>());
    }
    std::sort(sel.begin(), sel.end());
    sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
    if (!sel.empty() && sel.back() >= scene_size) fail(ErrorCode::BadRequest, "selection index out of range");
    return sel;
}

nlohmann::json parse_body(const httplib::Request &req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) fail(ErrorCode::BadRequest, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::parse_error &e) {
        fail(ErrorCode::BadRequest, std::string("request body is not JSON: ") + e.what());
    }
}

} // namespace

struct Service::Impl {
    explicit Impl(ServiceInputs in) : inputs(std::move(in)) {
        Revision r;
        r.id = 0;
        r.op = "load";
        r.scene = std::make_shared<const GaussianScene>(inputs.scene);
        revisions.push_back(std::make_shared<const Revision>(r));
        inputs.scene = GaussianScene(inputs.scene.sh_degree(), inputs.scene.feature_dim()); // the revision owns it
        routes();
    }

    ~Impl() { shutdown(); }

    ServiceInputs inputs;
    httplib::Server server;
    std::thread listener;

    std::mutex state; // revisions, current, job
    std::vector<std::shared_ptr<const Revision>> revisions;
    int current = 0;
    std::mutex writer; // serializes mutations
    std::optional<Job> job;
    std::thread worker;
    std::atomic<bool> cancel{false};
    std::condition_variable job_done;

    std::shared_ptr<const Revision> revision(int id) {
        std::lock_guard lock(state);
        if (id < 0) id = current;
        if (id >= int(revisions.size())) fail(ErrorCode::UnknownRevision, "no revision " + std::to_string(id));
        return revisions[id];
    }

    std::shared_ptr<const Revision> revision_from(const nlohmann::json &body) {
        if (!body.contains("rev") || body.at("rev").is_null()) return revision(-1);
        if (!body.at("rev").is_number_integer()) fail(ErrorCode::BadRequest, "rev must be an integer");
        return revision(body.at("rev").get<int>());
    }

    int commit(int parent, std::string op, std::shared_ptr<const GaussianScene> scene,
               std::shared_ptr<const std::vector<GaussianScene>> frames = {}) {
        std::lock_guard lock(state);
        Revision r;
        r.id = int(revisions.size());
        r.parent = parent;
        r.op = std::move(op);
        r.scene = std::move(scene);
        r.frames = std::move(frames);
        revisions.push_back(std::make_shared<const Revision>(std::move(r)));
        current = revisions.back()->id;
        return current;
    }

    Camera camera_of(const httplib::Request &req) {
        if (req.has_param("eye")) {
            const Vec3 eye = vec3_param(req.get_param_value("eye"), "eye");
            const Vec3 target = req.has_param("target") ? vec3_param(req.get_param_value("target"), "target") : Vec3::Zero();
            const Vec3 up = req.has_param("up") ? vec3_param(req.get_param_value("up"), "up") : Vec3::UnitZ();
            const int w = int_param(req, "width", 256), h = int_param(req, "height", 256);
            const double f = number_param(req, "focal", 0.9 * w);
            if (w <= 0 || h <= 0 || w > 4096 || h > 4096 || !(f > 0)) fail(ErrorCode::BadRequest, "bad camera size or focal");
            if ((eye - target).norm() == 0.0 || (eye - target).normalized().cross(up.normalized()).norm() < 1e-9)
                fail(ErrorCode::BadRequest, "camera eye, target and up are degenerate");
            return Camera::look_at(eye, target, up, f, f, w, h);
        }
        const int index = int_param(req, "camera", 0);
        if (index < 0 || index >= int(inputs.cameras.size()))
            fail(ErrorCode::BadRequest, "camera index out of range (have " + std::to_string(inputs.cameras.size()) + ")");
        return inputs.cameras[index];
    }

    static void reply_json(httplib::Response &res, const nlohmann::json &j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    static void reply_png(httplib::Response &res, const Image8 &img) {
        const auto bytes = encode_png(img);
        res.status = 200;
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }

    template <typename F>
    auto guarded(F f) {
        return [f](const httplib::Request &req, httplib::Response &res) {
            try {
                f(req, res);
            } catch (const Error &e) {
                reply_json(res, error_body(e.code(), e.what()), http_status(e.code()));
            } catch (const std::exception &e) {
                reply_json(res, error_body(ErrorCode::BadRequest, e.what()), 400);
            }
        };
    }

    nlohmann::json job_json(const Job &j) const {
        nlohmann::json out{{"id", j.id},          {"status", j.status},
                           {"progress", j.progress}, {"frames", j.frames},
                           {"source_revision", j.source_revision}};
        out["revision"] = j.revision >= 0 ? nlohmann::json(j.revision) : nlohmann::json();
        out["error"] = j.error ? *j.error : nlohmann::json();
        return out;
    }

    void routes() {
        server.Get("/scene/meta", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto rev = revision(req.has_param("rev") ? int_param(req, "rev", -1) : -1);
            nlohmann::json j;
            const auto &s = *rev->scene;
            j["revision"] = rev->id;
            j["parent"] = rev->parent;
            j["count"] = s.size();
            j["sh_degree"] = s.sh_degree();
            j["feature_dim"] = s.feature_dim();
            j["frames"] = rev->frames ? rev->frames->size() : 1;
            const auto [lo, hi] = s.bounds();
            j["bounds"] = {{lo.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), hi.z()}};
            j["vocabulary"] = nlohmann::json::array();
            for (const auto &[w, v] : inputs.vocab) j["vocabulary"].push_back(w);
            j["cameras"] = nlohmann::json::array();
            for (const auto &c : inputs.cameras) j["cameras"].push_back(camera_to_json(c));
            j["materials"] = nlohmann::json::array();
            for (const auto &m : inputs.bank)
                j["materials"].push_back({{"name", m.name}, {"model", std::string(physics::to_string(m.model))}, {"aliases", m.aliases}});
            {
                std::lock_guard lock(state);
                j["current"] = current;
                j["revisions"] = nlohmann::json::array();
                for (const auto &r : revisions)
                    j["revisions"].push_back({{"id", r->id}, {"parent", r->parent}, {"op", r->op}, {"count", r->scene->size()}});
                j["job"] = job ? job_json(*job) : nlohmann::json();
            }
            reply_json(res, j);
        }));

        server.Post("/segment", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto body = parse_body(req);
            const auto rev = revision_from(body);
            const auto q = query_of(body);
            decompose::PostprocessConfig post;
            if (body.contains("postprocess")) {
                const auto &p = body.at("postprocess");
                if (p.is_boolean()) {
                    post.enabled = p.get<bool>();
                } else if (p.is_object()) {
                    post.enabled = true;
                    post.knn_k = p.value("knn_k", post.knn_k);
                    post.majority = p.value("majority", post.majority);
                    post.eps = p.value("eps", post.eps);
                    post.min_pts = p.value("min_pts", post.min_pts);
                    post.extra_negatives = p.value("extra_negatives", post.extra_negatives);
                } else if (!p.is_null()) {
                    fail(ErrorCode::BadRequest, "postprocess must be a boolean or an object");
                }
            }
            const auto sel = decompose::query(*rev->scene, inputs.head, inputs.vocab, q, post);
            reply_json(res, {{"revision", rev->id}, {"indices", sel.indices}, {"scores", sel.scores}, {"count", sel.size()}});
        }));

        server.Post("/edit", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto body = parse_body(req);
            if (!body.contains("script")) fail(ErrorCode::BadRequest, "edit needs a \"script\"");
            const auto script = edit::parse_script(body.at("script"));
            std::lock_guard w(writer);
            const auto rev = revision_from(body);
            auto sel = selection_of(body.value("selection", nlohmann::json()), rev->scene->size());
            auto result = edit::apply_script(*rev->scene, std::move(sel), script);
            const int id = commit(rev->id, "edit", std::make_shared<const GaussianScene>(std::move(result.scene)));
            reply_json(res, {{"revision", id}, {"parent", rev->id}, {"selection", result.selection},
                             {"count", revision(id)->scene->size()}});
        }));

        server.Post("/revert", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto body = parse_body(req);
            if (!body.contains("rev")) fail(ErrorCode::BadRequest, "revert needs \"rev\"");
            std::lock_guard w(writer);
            const auto rev = revision_from(body);
            const int id = commit(rev->id, "revert", rev->scene, rev->frames);
            reply_json(res, {{"revision", id}, {"parent", rev->id}});
        }));

        server.Post("/simulate", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto body = parse_body(req);
            reply_json(res, start_job(body), 202);
        }));

        server.Get(R"(/job/(\d+))", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const int id = std::stoi(req.matches[1]);
            std::lock_guard lock(state);
            if (!job || job->id != id) fail(ErrorCode::BadRequest, "no job " + std::to_string(id));
            reply_json(res, job_json(*job));
        }));

        server.Get("/render", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto rev = revision(req.has_param("rev") ? int_param(req, "rev", -1) : -1);
            const int frame = int_param(req, "frame", 0);
            const int frame_count = rev->frames ? int(rev->frames->size()) : 1;
            if (frame < 0 || frame >= frame_count)
                fail(ErrorCode::BadRequest, "frame out of range (have " + std::to_string(frame_count) + ")");
            const GaussianScene &s = rev->frames ? (*rev->frames)[frame] : *rev->scene;
            const Camera cam = camera_of(req);
            raster::RasterConfig rc;
            const bool pca = req.has_param("features") && req.get_param_value("features") == "pca";
            rc.render_features = pca;
            const auto t = raster::rasterize(s, cam, rc);
            reply_png(res, to_image8(pca ? raster::render_feature_pca(t) : t.color_image()));
        }));

        server.Get("/heatmap", guarded([this](const httplib::Request &req, httplib::Response &res) {
            if (!req.has_param("query")) fail(ErrorCode::BadRequest, "heatmap needs a query");
            nlohmann::json qj{{"query", req.get_param_value("query")}};
            if (req.has_param("negatives")) qj["negatives"] = list_param(req.get_param_value("negatives"));
            if (req.has_param("tau")) qj["tau"] = number_param(req, "tau", 0.6);
            if (req.has_param("temperature")) qj["temperature"] = number_param(req, "temperature", 0.1);
            const auto q = query_of(qj);
            const auto rev = revision(req.has_param("rev") ? int_param(req, "rev", -1) : -1);
            const Camera cam = camera_of(req);
            const GaussianScene &s = *rev->scene;
            const auto p = decompose::positive_probability(decompose::decode_features(s, inputs.head), inputs.vocab, q);
            const bool raw = req.has_param("raw") && req.get_param_value("raw") != "0";
            // raw: coverage-weighted p(positive) as one gray channel
            reply_png(res, to_image8(raw ? decompose::render_weights(s, p, cam) : decompose::overlay(s, p, cam)));
        }));
    }

    decompose::QuerySpec query_of(const nlohmann::json &body) const {
        decompose::QuerySpec q;
        if (!body.contains("query") || !body.at("query").is_string()) fail(ErrorCode::BadRequest, "a string \"query\" is required");
        try {
            q.positive = body.at("query").get<std::string>();
            if (body.contains("negatives")) q.negatives = body.at("negatives").get<std::vector<std::string>>();
            q.tau = body.value("tau", q.tau);
            q.temperature = body.value("temperature", q.temperature);
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorCode::BadRequest, std::string("bad query field: ") + e.what());
        }
        try {
            q.validate();
        } catch (const Error &e) {
            fail(ErrorCode::BadRequest, e.what());
        }
        return q;
    }

    nlohmann::json start_job(const nlohmann::json &body) {
        const auto rev = revision_from(body);
        const auto sel = selection_of(body.value("selection", nlohmann::json()), rev->scene->size());
        if (sel.empty()) fail(ErrorCode::EmptySelection, "simulate needs a non-empty selection");
        const int frames = body.value("frames", 24);
        if (frames < 1 || frames > 10000) fail(ErrorCode::BadRequest, "frames must be in [1, 10000]");

        physics::SimConfig cfg = inputs.sim;
        if (body.contains("fps")) cfg.fps = body.at("fps").get<double>();
        if (body.contains("grid_res")) cfg.grid_res = body.at("grid_res").get<int>();
        if (!(cfg.fps > 0) || cfg.grid_res < 8) fail(ErrorCode::BadRequest, "fps must be positive and grid_res >= 8");

        // materials: a bank name for all, "auto" for rigid-alias detection, or one name per index
        std::vector<int> material(sel.size());
        const auto mj = body.value("materials", nlohmann::json(inputs.default_material));
        const std::string fallback = body.value("default_material", inputs.default_material);
        if (mj.is_string() && mj.get<std::string>() == "auto") {
            material = physics::assign_materials(*rev->scene, sel, inputs.head, inputs.vocab, inputs.bank, fallback);
        } else if (mj.is_string()) {
            std::fill(material.begin(), material.end(), int(physics::find_material(inputs.bank, mj.get<std::string>())));
        } else if (mj.is_array() && mj.size() == sel.size()) {
            for (std::size_t k = 0; k < sel.size(); ++k) {
                if (!mj[k].is_string()) fail(ErrorCode::BadRequest, "materials entries must be names");
                material[k] = int(physics::find_material(inputs.bank, mj[k].get<std::string>()));
            }
        } else {
            fail(ErrorCode::BadRequest, "materials must be a name, \"auto\", or one name per selected index");
        }

        const auto g = body.value("gravity", nlohmann::json("auto"));
        const bool floor = body.value("floor", true);
        if (g.is_string() && g.get<std::string>() == "auto") {
            const auto est = geom::estimate_floor(*rev->scene, inputs.head, inputs.vocab);
            cfg.gravity = inputs.gravity_magnitude * est.gravity;
            if (floor) cfg.planes = {physics::CollisionPlane{est.plane}};
        } else {
            const Vec3 dir = vec3_of(g, "gravity");
            if (dir.norm() == 0.0) {
                cfg.gravity = Vec3::Zero();
            } else {
                cfg.gravity = inputs.gravity_magnitude * dir.normalized();
                if (floor) {
                    // a floor through the lowest scene centroid along gravity
                    const Vec3 down = dir.normalized();
                    double lowest = -std::numeric_limits<double>::infinity();
                    for (const auto &c : rev->scene->centroids) lowest = std::max(lowest, c.dot(down));
                    cfg.planes = {physics::CollisionPlane{geom::Plane{-down, -lowest}}};
                }
            }
        }

        std::lock_guard lock(state);
        if (job && job->status == "running") fail(ErrorCode::Busy, "a simulation is already running (job " + std::to_string(job->id) + ")");
        if (worker.joinable()) worker.join();
        Job j;
        j.id = job ? job->id + 1 : 0;
        j.frames = frames;
        j.source_revision = rev->id;
        job = j;
        cancel = false;
        worker = std::thread([this, rev, sel, material, cfg, frames, id = j.id] {
            try {
                auto result = physics::simulate(*rev->scene, sel, material, inputs.bank, cfg, frames, [this, id](int f) {
                    if (cancel) throw Cancelled{};
                    std::lock_guard lock(state);
                    if (job && job->id == id) job->progress = f;
                });
                auto frames_ptr = std::make_shared<const std::vector<GaussianScene>>(std::move(result.frames));
                std::lock_guard w(writer);
                const int rid = commit(rev->id, "simulate", std::make_shared<const GaussianScene>(frames_ptr->back()), frames_ptr);
                std::lock_guard lock(state);
                job->status = "done";
                job->revision = rid;
            } catch (const Cancelled &) {
                std::lock_guard lock(state);
                job->status = "failed";
                job->error = error_body(ErrorCode::Contract, "cancelled")["error"];
            } catch (const Error &e) {
                std::lock_guard lock(state);
                job->status = "failed";
                job->error = error_body(e.code(), e.what())["error"];
            } catch (const std::exception &e) {
                std::lock_guard lock(state);
                job->status = "failed";
                job->error = error_body(ErrorCode::Contract, e.what())["error"];
            }
            job_done.notify_all();
        });
        return {{"job", j.id}, {"source_revision", rev->id}};
    }

    void shutdown() {
        server.stop();
        if (listener.joinable()) listener.join();
        cancel = true;
        if (worker.joinable()) worker.join();
    }
};

Service::Service(ServiceInputs inputs) : impl_(std::make_unique<Impl>(std::move(inputs))) {
    const int n = std::max(1, impl_->inputs.threads);
    impl_->server.new_task_queue = [n] { return new httplib::ThreadPool(n); };
}

Service::~Service() = default;

int Service::start(const std::string &host, int port) {
    int bound = port;
    if (port == 0)
        bound = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port))
        bound = -1;
    if (bound <= 0) fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void Service::run(const std::string &host, int port) {
    if (!impl_->server.bind_to_port(host, port)) fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->server.listen_after_bind();
}

void Service::stop() { impl_->shutdown(); }

void Service::wait_for_job() {
    std::unique_lock lock(impl_->state);
    impl_->job_done.wait(lock, [this] { return !impl_->job || impl_->job->status != "running"; });
}

} // namespace fsplat::service
