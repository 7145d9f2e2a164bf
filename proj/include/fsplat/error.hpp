#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fsplat {

/// Stable error codes. The CLI and the HTTP service report these verbatim.
enum class ErrorCode {
    Format,
    Validation,
    Contract,
    Degenerate,
    UnknownVocabulary,
    Divergence,
    Io,
    Provider,
    Cfl,
    EmptySelection,
    Busy,
    UnknownRevision,
    BadRequest,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &message) : std::runtime_error(message), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised when loaded data contains non-finite values; carries the offending indices.
class ValidationError : public Error {
public:
    ValidationError(const std::string &message, std::vector<std::size_t> indices)
        : Error(ErrorCode::Validation, message), indices_(std::move(indices)) {}
    const std::vector<std::size_t> &indices() const noexcept { return indices_; }

private:
    std::vector<std::size_t> indices_;
};

[[noreturn]] void fail(ErrorCode code, const std::string &message);

inline void require(bool condition, ErrorCode code, const std::string &message) {
    if (!condition) fail(code, message);
}

} // namespace fsplat
