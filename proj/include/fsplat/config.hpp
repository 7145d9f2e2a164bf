#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace fsplat {

/// Reads the TOML subset used by fsplat config files into JSON: `[table]` and `[a.b]` headers,
/// `key = value` with bare or quoted keys, basic and literal strings, integers, floats,
/// booleans and single-line arrays. `#` starts a comment. Throws Error(Format) with the line.
nlohmann::json parse_toml(const std::string &text);
nlohmann::json load_toml(const std::filesystem::path &path);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = ".";
    std::string scene = "scene.fspl";
    std::string head = "head.bin";
    std::string vocab = "vocab.json";
    std::string cameras = "cameras.json";
    int threads = 4;
    // simulation defaults
    int grid_res = 48;
    double fps = 24.0;
    double gravity = 9.8;
    std::string default_material = "elastic";
    std::uint64_t seed = 0;

    std::filesystem::path path_of(const std::string &name) const { return data_dir / name; }
};

/// Environment lookup, injectable for tests.
using EnvLookup = std::function<std::optional<std::string>(const std::string &)>;
std::optional<std::string> process_env(const std::string &name);

/// Defaults, then the file's [server], [data] and [simulation] tables (when `path` is given),
/// then FSPLAT_PORT and FSPLAT_DATA. Unknown keys are rejected.
ServiceConfig load_service_config(const std::optional<std::filesystem::path> &path, const EnvLookup &env = process_env);

} // namespace fsplat
