#pragma once

#include <stdexcept>
#include <string>

namespace impreg {

enum class ErrorCode {
  InvalidArgument,
  DegenerateGain,
  DegenerateSequence,
  SequenceTooShort,
  SingularSystem,
  NonpositiveNoise,
  NumericalFailure,
  OptimizationFailed,
  EmptyDataset,
  Io,
  FormatVersionMismatch,
  ChecksumMismatch,
  NonFiniteActivation,
  NonFiniteGradient,
  DegenerateDenominator,
  Parse,
  IndexOutOfRange,
};

inline const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateGain: return "DegenerateGain";
    case ErrorCode::DegenerateSequence: return "DegenerateSequence";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NonpositiveNoise: return "NonpositiveNoise";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::OptimizationFailed: return "OptimizationFailed";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::Io: return "Io";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for errors caused by bad user input rather than numerical trouble.
inline bool is_input_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::DegenerateSequence:
    case ErrorCode::SequenceTooShort:
    case ErrorCode::EmptyDataset:
    case ErrorCode::Io:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::Parse:
    case ErrorCode::IndexOutOfRange:
      return true;
    default:
      return false;
  }
}

}  // namespace impreg
