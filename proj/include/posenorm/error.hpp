#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posenorm {

enum class ErrorKind {
  TooFewPoints,
  DegenerateConfiguration,
  SingularWarp,
  TooFewVisible,
  Infeasible,
  UnknownPart,
  FormatError,
  DimensionMismatch,
  LayoutMismatch,
  MissingFile,
  ParseError,
  InconsistentIds,
  DegenerateLabels,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::SingularWarp: return "SingularWarp";
    case ErrorKind::TooFewVisible: return "TooFewVisible";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::UnknownPart: return "UnknownPart";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InconsistentIds: return "InconsistentIds";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// Every library failure is reported through this one exception type; callers
// dispatch on kind() when they need to (the CLI maps kinds to exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace posenorm
