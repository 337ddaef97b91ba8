#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hevrl {

enum class ErrorKind {
  InvalidArgument,
  ZeroDistance,
  EmptySequence,
  GridMismatch,
  ShapeMismatch,
  IndexOutOfRange,
  OutOfEnvelope,
  InfeasiblePower,
  PowerLimit,
  CurrentLimit,
  SocLimit,
  NoFeasiblePath,
  Io,
  Parse,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a machine-readable kind so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hevrl
