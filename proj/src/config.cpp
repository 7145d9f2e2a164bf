#include "fsplat/config.hpp"

#include "fsplat/error.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fsplat {

namespace {

class LineParser {
public:
    LineParser(std::string_view s, int line) : s_(s), line_(line) {}

    [[noreturn]] void error(const std::string &what) const {
        fail(ErrorCode::Format, "config line " + std::to_string(line_) + ": " + what);
    }
    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool at_end() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    void expect(char c) {
        skip_ws();
        if (peek() != c) error(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string key() {
        skip_ws();
        if (peek() == '"') return basic_string();
        if (peek() == '\'') return literal_string();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
            ++pos_;
        if (pos_ == start) error("expected a key");
        return std::string(s_.substr(start, pos_ - start));
    }

    std::vector<std::string> dotted_key() {
        std::vector<std::string> parts{key()};
        skip_ws();
        while (peek() == '.') {
            ++pos_;
            parts.push_back(key());
            skip_ws();
        }
        return parts;
    }

    nlohmann::json value() {
        skip_ws();
        const char c = peek();
        if (c == '"') return basic_string();
        if (c == '\'') return literal_string();
        if (c == '[') return array();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

private:
    std::string basic_string() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) error("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                default: error(std::string("unsupported escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) error("unterminated string");
        ++pos_;
        return out;
    }

    std::string literal_string() {
        ++pos_;
        const std::size_t end = s_.find('\'', pos_);
        if (end == std::string_view::npos) error("unterminated string");
        std::string out(s_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }

    nlohmann::json array() {
        ++pos_;
        nlohmann::json a = nlohmann::json::array();
        skip_ws();
        if (peek() == ']') {
            ++pos_;
            return a;
        }
        for (;;) {
            a.push_back(value());
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                skip_ws();
                if (peek() == ']') { // trailing comma
                    ++pos_;
                    return a;
                }
                continue;
            }
            if (peek() == ']') {
                ++pos_;
                return a;
            }
            error("expected ',' or ']' in array");
        }
    }

    nlohmann::json number() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '+' ||
                                    s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == '_'))
            ++pos_;
        std::string tok(s_.substr(start, pos_ - start));
        std::erase(tok, '_');
        if (tok.empty()) error("expected a value");
        const bool is_float = tok.find_first_of(".eEn") != std::string::npos; // n: inf, nan
        if (!is_float) {
            std::int64_t v = 0;
            const char *b = tok.data() + (tok[0] == '+' ? 1 : 0);
            const auto [p, ec] = std::from_chars(b, tok.data() + tok.size(), v);
            if (ec != std::errc() || p != tok.data() + tok.size()) error("bad integer '" + tok + "'");
            return v;
        }
        char *end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size()) error("bad number '" + tok + "'");
        return v;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    int line_;
};

nlohmann::json &descend(nlohmann::json &root, const std::vector<std::string> &path, std::size_t count, LineParser &lp) {
    nlohmann::json *node = &root;
    for (std::size_t i = 0; i < count; ++i) {
        nlohmann::json &next = (*node)[path[i]];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) lp.error("'" + path[i] + "' is not a table");
        node = &next;
    }
    return *node;
}

} // namespace

nlohmann::json parse_toml(const std::string &text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json *table = &root;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        LineParser lp(line, n);
        if (lp.at_end()) continue;
        if (lp.peek() == '[') {
            lp.expect('[');
            const auto path = lp.dotted_key();
            lp.expect(']');
            if (!lp.at_end()) lp.error("trailing characters after table header");
            table = &descend(root, path, path.size(), lp);
            continue;
        }
        const auto path = lp.dotted_key();
        lp.expect('=');
        nlohmann::json v = lp.value();
        if (!lp.at_end()) lp.error("trailing characters after value");
        nlohmann::json &parent = descend(*table, path, path.size() - 1, lp);
        if (parent.contains(path.back())) lp.error("duplicate key '" + path.back() + "'");
        parent[path.back()] = std::move(v);
    }
    return root;
}

nlohmann::json load_toml(const std::filesystem::path &path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::Io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_toml(ss.str());
}

std::optional<std::string> process_env(const std::string &name) {
    const char *v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
}

namespace {

template <typename T>
void take(const nlohmann::json &table, const char *key, T &out) {
    if (!table.contains(key)) return;
    try {
        out = table.at(key).get<T>();
    } catch (const nlohmann::json::exception &) {
        fail(ErrorCode::Format, std::string("config key '") + key + "' has the wrong type");
    }
}

void reject_unknown(const nlohmann::json &table, const char *name, std::initializer_list<const char *> known) {
    for (const auto &[k, v] : table.items()) {
        bool ok = false;
        for (const char *kk : known) ok = ok || k == kk;
        if (!ok) fail(ErrorCode::Format, std::string("unknown config key [") + name + "]." + k);
    }
}

int parse_port(const std::string &s) {
    int port = -1;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), port);
    if (ec != std::errc() || p != s.data() + s.size() || port < 0 || port > 65535)
        fail(ErrorCode::Format, "FSPLAT_PORT must be a port number, got '" + s + "'");
    return port;
}

} // namespace

ServiceConfig load_service_config(const std::optional<std::filesystem::path> &path, const EnvLookup &env) {
    ServiceConfig c;
    if (path) {
        const auto j = load_toml(*path);
        for (const auto &[k, v] : j.items())
            if (k != "server" && k != "data" && k != "simulation") fail(ErrorCode::Format, "unknown config table [" + k + "]");
        if (j.contains("server")) {
            const auto &t = j.at("server");
            reject_unknown(t, "server", {"host", "port", "threads"});
            take(t, "host", c.host);
            take(t, "port", c.port);
            take(t, "threads", c.threads);
        }
        if (j.contains("data")) {
            const auto &t = j.at("data");
            reject_unknown(t, "data", {"dir", "scene", "head", "vocab", "cameras"});
            std::string dir = c.data_dir.string();
            take(t, "dir", dir);
            c.data_dir = dir;
            // relative data directories are taken from the config file's location
            if (c.data_dir.is_relative()) c.data_dir = path->parent_path() / c.data_dir;
            take(t, "scene", c.scene);
            take(t, "head", c.head);
            take(t, "vocab", c.vocab);
            take(t, "cameras", c.cameras);
        }
        if (j.contains("simulation")) {
            const auto &t = j.at("simulation");
            reject_unknown(t, "simulation", {"grid_res", "fps", "gravity", "default_material", "seed"});
            take(t, "grid_res", c.grid_res);
            take(t, "fps", c.fps);
            take(t, "gravity", c.gravity);
            take(t, "default_material", c.default_material);
            take(t, "seed", c.seed);
        }
    }
    if (auto p = env("FSPLAT_PORT")) c.port = parse_port(*p);
    if (auto d = env("FSPLAT_DATA")) c.data_dir = *d;
    if (c.port < 0 || c.port > 65535) fail(ErrorCode::Format, "port out of range");
    if (c.threads < 1) fail(ErrorCode::Format, "threads must be positive");
    return c;
}

} // namespace fsplat
