#include "modgate/error.hpp"

namespace modgate {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InsufficientReference: return "InsufficientReference";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DimensionError: return "DimensionError";
    case ErrorKind::EmptyIndex: return "EmptyIndex";
    case ErrorKind::EmptyLogo: return "EmptyLogo";
    case ErrorKind::LogoTooLarge: return "LogoTooLarge";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::SplitExhausted: return "SplitExhausted";
    case ErrorKind::TooFewBoxes: return "TooFewBoxes";
    case ErrorKind::DegenerateTemplate: return "DegenerateTemplate";
    case ErrorKind::TemplateTooLarge: return "TemplateTooLarge";
    case ErrorKind::DegenerateTraining: return "DegenerateTraining";
    case ErrorKind::DegenerateRoc: return "DegenerateRoc";
    case ErrorKind::NotFitted: return "NotFitted";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::IllegalTransition: return "IllegalTransition";
    case ErrorKind::DuplicateDecision: return "DuplicateDecision";
    case ErrorKind::Undefined: return "Undefined";
  }
  return "Unknown";
}

}  // namespace modgate
