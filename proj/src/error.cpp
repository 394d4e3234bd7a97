#include "reart/error.hpp"

namespace reart {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AngleNearPi: return "AngleNearPi";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::NoValidFlow: return "NoValidFlow";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::EmptyPart: return "EmptyPart";
    case ErrorCode::InsufficientMotion: return "InsufficientMotion";
    case ErrorCode::NoConstraints: return "NoConstraints";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace reart
