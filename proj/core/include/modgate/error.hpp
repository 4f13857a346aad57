#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modgate {

enum class ErrorKind {
  InvalidSpec,
  InvalidConfig,
  ConfigError,
  FormatError,
  DecodeError,
  IoError,
  InsufficientReference,
  InsufficientData,
  DimensionError,
  EmptyIndex,
  EmptyLogo,
  LogoTooLarge,
  OutOfBounds,
  SplitExhausted,
  TooFewBoxes,
  DegenerateTemplate,
  TemplateTooLarge,
  DegenerateTraining,
  DegenerateRoc,
  NotFitted,
  NotFound,
  IllegalTransition,
  DuplicateDecision,
  Undefined,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the ErrorKind codes so
/// callers (CLI, HTTP layer, tests) can branch on it without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace modgate
