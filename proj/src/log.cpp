#include "fsplat/log.hpp"

#include <iostream>
#include <mutex>

namespace fsplat {

namespace {
std::mutex sink_mutex;
std::function<void(const std::string &)> &sink() {
    static std::function<void(const std::string &)> s = [](const std::string &m) { std::cerr << "warning: " << m << "\n"; };
    return s;
}
} // namespace

void set_warning_sink(std::function<void(const std::string &)> s) {
    std::lock_guard lock(sink_mutex);
    sink() = std::move(s);
}

void warn(const std::string &message) {
    std::lock_guard lock(sink_mutex);
    if (sink()) sink()(message);
}

} // namespace fsplat
