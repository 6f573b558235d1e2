#include "mtg/error.hpp"

namespace mtg {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::invariant: return "invariant";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::io: return "io";
    case ErrorCode::missing_layer: return "missing_layer";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::port_failure: return "port_failure";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

}  // namespace mtg
