#pragma once

#include <stdexcept>
#include <string>

namespace reart {

enum class ErrorCode {
  AngleNearPi,
  KTooLarge,
  NoValidFlow,
  EmptyCloud,
  NonFiniteCost,
  SizeMismatch,
  NonFiniteGradient,
  DegenerateInput,
  EmptyPart,
  InsufficientMotion,
  NoConstraints,
  MissingGroundTruth,
  LengthMismatch,
  TooLarge,
  SpecInfeasible,
  Io,
  Format,
};

const char* to_string(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace reart
