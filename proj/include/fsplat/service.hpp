#pragma once

// Local HTTP service over an in-memory revision stack. Endpoints and bodies are described in
// docs/api.schema.json.

#include "fsplat/camera.hpp"
#include "fsplat/dataset.hpp"
#include "fsplat/error.hpp"
#include "fsplat/distill.hpp"
#include "fsplat/physics.hpp"
#include "fsplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace fsplat::service {

struct ServiceInputs {
    GaussianScene scene;
    distill::DecodeHead head;
    Vocabulary vocab;
    std::vector<Camera> cameras;
    std::vector<physics::MaterialSpec> bank = physics::default_bank();
    physics::SimConfig sim;          // defaults for /simulate
    double gravity_magnitude = 9.8;  // world units per s^2 for unit gravity directions
    std::string default_material = "elastic";
    int threads = 4;                 // HTTP worker threads
};

/// HTTP status for an error code: 400 for bad input, 404 unknown revision, 409 busy, else 500.
int http_status(ErrorCode code);
/// {"error": {"code": "...", "message": "..."}}
nlohmann::json error_body(ErrorCode code, const std::string &message);

class Service {
public:
    explicit Service(ServiceInputs inputs);
    ~Service();
    Service(const Service &) = delete;
    Service &operator=(const Service &) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port. Returns the port.
    int start(const std::string &host, int port);
    /// Binds and serves on the calling thread until stop().
    void run(const std::string &host, int port);
    void stop();

    /// Blocks until the running simulation job (if any) finishes.
    void wait_for_job();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace fsplat::service
