#include "fsplat/error.hpp"

namespace fsplat {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::Format: return "format_error";
    case ErrorCode::Validation: return "validation_error";
    case ErrorCode::Contract: return "contract_error";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::UnknownVocabulary: return "unknown_vocabulary";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Provider: return "provider_error";
    case ErrorCode::Cfl: return "cfl_violation";
    case ErrorCode::EmptySelection: return "empty_selection";
    case ErrorCode::Busy: return "busy";
    case ErrorCode::UnknownRevision: return "unknown_revision";
    case ErrorCode::BadRequest: return "bad_request";
    }
    return "unknown";
}

void fail(ErrorCode code, const std::string &message) { throw Error(code, message); }

} // namespace fsplat
