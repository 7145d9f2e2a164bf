#pragma once

#include <functional>
#include <string>

namespace fsplat {

/// Destination for non-fatal warnings (default: stderr). Swap it before starting work, not during.
void set_warning_sink(std::function<void(const std::string &)> sink);
void warn(const std::string &message);

} // namespace fsplat
