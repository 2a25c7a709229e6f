#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crisp {

enum class ErrorCode {
  DegenerateInput,
  InsufficientPoints,
  InsufficientOverlap,
  ManifestParse,
  ShapeMismatch,
  NonFiniteData,
  LengthMismatch,
  EmptySet,
  ScenarioMismatch,
  UnknownFormat,
  InvalidArgument,
  ConfigMismatch,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::ManifestParse: return "ManifestParse";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::ScenarioMismatch: return "ScenarioMismatch";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code; the CLI maps codes to exit
/// statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace crisp
