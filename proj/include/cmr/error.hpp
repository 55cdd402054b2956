#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cmr {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  LabelOutOfRange,
  DegenerateIntensity,
  InsufficientGroupSize,
  ShapeMismatch,
  InvalidArgument,
  UnknownArchitecture,
  Divergence,
  NoPositives,
  UmapKindMismatch,
  EmptyReference,
  UndefinedMetric,
  OutOfBounds,
  EditRejected,
  SessionClosed,
  StaleVersion,
  NotFound,
  ConfigError,
  MissingDependency,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cmr
