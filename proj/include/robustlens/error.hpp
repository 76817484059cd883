#pragma once

#include <stdexcept>
#include <string>

namespace robustlens {

enum class ErrorCode {
  shape_mismatch,
  unbound_input,
  non_finite,
  bad_config,
  bad_magic,
  bad_version,
  truncated,
  trailing_data,
  layout_mismatch,
  io,
  not_converged,
  degenerate,
};

/// Exception carrying a machine-checkable code next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace robustlens
