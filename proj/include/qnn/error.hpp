#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qnn {

/// Failure categories shared by every module. The CLI maps these onto exit
/// codes, and tests assert on them instead of on message text.
enum class ErrorCode {
  DimensionMismatch,
  NonSymmetric,
  NotPSD,
  EmptyData,
  InvalidArgument,
  SolverFailed,
  TraceConditionViolated,
  DegenerateVector,
  TooFewSamples,
  NonFinite,
  ConstantSignal,
  NoSolution,
  RegionUnsupported,
  Violated,
  Infeasible,
  Unbounded,
  IllConditioned,
  SingularGain,
  DegreeTooHigh,
  AssumptionViolated,
  ParseError,
  RaggedRows,
  BadMagic,
  TruncatedFile,
  CountMismatch,
  BadShape,
  VersionMismatch,
  SchemaError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SolverFailed: return "SolverFailed";
    case ErrorCode::TraceConditionViolated: return "TraceConditionViolated";
    case ErrorCode::DegenerateVector: return "DegenerateVector";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ConstantSignal: return "ConstantSignal";
    case ErrorCode::NoSolution: return "NoSolution";
    case ErrorCode::RegionUnsupported: return "RegionUnsupported";
    case ErrorCode::Violated: return "Violated";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::SingularGain: return "SingularGain";
    case ErrorCode::DegreeTooHigh: return "DegreeTooHigh";
    case ErrorCode::AssumptionViolated: return "AssumptionViolated";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedRows: return "RaggedRows";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::BadShape: return "BadShape";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define QNN_THROW_UNLESS(cond, code, msg)          \
  do {                                             \
    if (!(cond)) throw ::qnn::Error((code), (msg)); \
  } while (0)

}  // namespace qnn
