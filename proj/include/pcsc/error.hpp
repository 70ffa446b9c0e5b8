#pragma once

#include <stdexcept>
#include <string>

namespace pcsc {

// Error taxonomy. The CLI maps classes to exit codes: usage -> 1,
// data -> 2, numerical -> 3.
enum class ErrorCode {
  // data / schema
  MissingColumn,
  NonFiniteValue,
  BadT0,
  RowCountMismatch,
  IoError,
  BadConfig,
  BadPhi,
  MissingProxies,
  MissingCovariates,
  UnderIdentified,
  EmptyWindow,
  // numerical
  SingularSystem,
  NoConvergence,
  NonPsdWeight,
  DegenerateBaseline,
  NotOveridentified,
  InvalidWeighting,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::BadT0: return "BadT0";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadPhi: return "BadPhi";
    case ErrorCode::MissingProxies: return "MissingProxies";
    case ErrorCode::MissingCovariates: return "MissingCovariates";
    case ErrorCode::UnderIdentified: return "UnderIdentified";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NonPsdWeight: return "NonPsdWeight";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::NotOveridentified: return "NotOveridentified";
    case ErrorCode::InvalidWeighting: return "InvalidWeighting";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

  // True for failures of the numerics (singular systems, divergence),
  // as opposed to malformed inputs.
  bool numerical() const {
    switch (code_) {
      case ErrorCode::SingularSystem:
      case ErrorCode::NoConvergence:
      case ErrorCode::NonPsdWeight:
      case ErrorCode::DegenerateBaseline:
      case ErrorCode::NotOveridentified:
      case ErrorCode::InvalidWeighting:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
};

}  // namespace pcsc
