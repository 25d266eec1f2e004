#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biotwin {

/// Machine-readable failure categories shared by every module.
enum class ErrorKind {
  InvalidArgument,
  PeriodOverflow,
  SampleRateTooLow,
  InvalidSchedule,
  InvalidQuietPeriod,
  TraceTooShort,
  UnknownCategory,
  NotFitted,
  EmptyInput,
  InvalidFolds,
  NIterExceedsGrid,
  WidthMismatch,
  ShapeMismatch,
  LengthMismatch,
  ConstantTruth,
  UnknownModel,
  CorpusTooSmall,
  IncompatibleArtifact,
  Io,
  Parse,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::PeriodOverflow: return "period-overflow";
    case ErrorKind::SampleRateTooLow: return "sample-rate-too-low";
    case ErrorKind::InvalidSchedule: return "invalid-schedule";
    case ErrorKind::InvalidQuietPeriod: return "invalid-quiet-period";
    case ErrorKind::TraceTooShort: return "trace-too-short";
    case ErrorKind::UnknownCategory: return "unknown-category";
    case ErrorKind::NotFitted: return "not-fitted";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::InvalidFolds: return "invalid-folds";
    case ErrorKind::NIterExceedsGrid: return "n-iter-exceeds-grid";
    case ErrorKind::WidthMismatch: return "width-mismatch";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::LengthMismatch: return "length-mismatch";
    case ErrorKind::ConstantTruth: return "constant-truth";
    case ErrorKind::UnknownModel: return "unknown-model";
    case ErrorKind::CorpusTooSmall: return "corpus-too-small";
    case ErrorKind::IncompatibleArtifact: return "incompatible-artifact";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view category() const noexcept { return to_string(kind_); }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace biotwin
