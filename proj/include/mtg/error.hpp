#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtg {

enum class ErrorCode {
  bad_magic,
  unsupported_version,
  truncated,
  non_finite,
  invariant,
  dimension_mismatch,
  integrity,
  io,
  missing_layer,
  empty_input,
  numeric,
  port_failure,
  usage,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-checkable category next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Data errors map to exit code 2 in the CLI; numeric ones to 3.
  bool is_numeric() const noexcept { return code_ == ErrorCode::numeric || code_ == ErrorCode::non_finite; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace mtg
