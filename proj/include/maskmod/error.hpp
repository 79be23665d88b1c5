#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskmod {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  layer_mismatch,
  bad_magic,
  bad_version,
  truncated,
  digest_mismatch,
  io,
  parse,
  numerical,
  invariant_violation,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::layer_mismatch: return "layer_mismatch";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::bad_version: return "bad_version";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::digest_mismatch: return "digest_mismatch";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::invariant_violation: return "invariant_violation";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI's one-line error output) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace maskmod
