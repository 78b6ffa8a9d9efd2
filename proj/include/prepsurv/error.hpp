#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prepsurv {

enum class ErrorCode {
  // data loading
  MissingOutcome,
  BadEventValue,
  SchemaMismatch,
  EmptyFile,
  IoError,
  // splitting
  TooFewRows,
  DegenerateSplit,
  // metrics
  NoEvents,
  NoComparablePairs,
  CensoringWeightUnderflow,
  // models
  Singular,
  MissingCells,
  WidthMismatch,
  // preprocessing
  AllRowsDropped,
  AllMissingColumn,
  NoDonors,
  UnderdeterminedColumn,
  SingularCovariance,
  TooFewEvents,
  RfeFitFailure,
  DegenerateLabel,
  InvalidStageOrder,
  // missingness injection
  AlreadyMissing,
  OutcomeColumnTargeted,
  DriverMissing,
  // search
  IllegalTransition,
  TerminalState,
  ParseError,
  // configuration
  ConfigError,
  InvalidArgument,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingOutcome: return "MissingOutcome";
    case ErrorCode::BadEventValue: return "BadEventValue";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::NoComparablePairs: return "NoComparablePairs";
    case ErrorCode::CensoringWeightUnderflow: return "CensoringWeightUnderflow";
    case ErrorCode::Singular: return "Singular";
    case ErrorCode::MissingCells: return "MissingCells";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::AllRowsDropped: return "AllRowsDropped";
    case ErrorCode::AllMissingColumn: return "AllMissingColumn";
    case ErrorCode::NoDonors: return "NoDonors";
    case ErrorCode::UnderdeterminedColumn: return "UnderdeterminedColumn";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::TooFewEvents: return "TooFewEvents";
    case ErrorCode::RfeFitFailure: return "RfeFitFailure";
    case ErrorCode::DegenerateLabel: return "DegenerateLabel";
    case ErrorCode::InvalidStageOrder: return "InvalidStageOrder";
    case ErrorCode::AlreadyMissing: return "AlreadyMissing";
    case ErrorCode::OutcomeColumnTargeted: return "OutcomeColumnTargeted";
    case ErrorCode::DriverMissing: return "DriverMissing";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::TerminalState: return "TerminalState";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace prepsurv
