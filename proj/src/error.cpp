#include "hevrl/error.hpp"

namespace hevrl {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ZeroDistance: return "ZeroDistance";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::OutOfEnvelope: return "OutOfEnvelope";
    case ErrorKind::InfeasiblePower: return "InfeasiblePower";
    case ErrorKind::PowerLimit: return "PowerLimit";
    case ErrorKind::CurrentLimit: return "CurrentLimit";
    case ErrorKind::SocLimit: return "SocLimit";
    case ErrorKind::NoFeasiblePath: return "NoFeasiblePath";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Parse: return "Parse";
  }
  return "Unknown";
}

}  // namespace hevrl
