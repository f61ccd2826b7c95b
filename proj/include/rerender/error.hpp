#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rerender {

enum class ErrorCode {
  invalid_argument,
  not_found,
  permission_denied,
  unauthorized,
  conflict,
  hook_unavailable,
  annotation_rejected,
  record_failed,
  io_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::permission_denied: return "permission-denied";
    case ErrorCode::unauthorized: return "unauthorized";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::hook_unavailable: return "hook-unavailable";
    case ErrorCode::annotation_rejected: return "annotation-rejected";
    case ErrorCode::record_failed: return "record-failed";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

/// Every failure surfaced by the library carries one of the codes above so
/// that the server and CLI can map it onto a status or exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::invalid_argument, what);
}

}  // namespace rerender
