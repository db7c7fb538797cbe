#pragma once

#include <stdexcept>
#include <string>

namespace bico {

enum class ErrorCode {
  DegeneratePair,
  DegenerateConfiguration,
  AllPairsDegenerate,
  NoValidHypothesis,
  EmptyInput,
  EmptyMesh,
  EmptyCloud,
  EmptyModel,
  TooFewPoints,
  ZOutOfRange,
  LengthMismatch,
  InvalidArgument,
  InvalidConfig,
  ParseError,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegeneratePair: return "DegeneratePair";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::AllPairsDegenerate: return "AllPairsDegenerate";
    case ErrorCode::NoValidHypothesis: return "NoValidHypothesis";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::EmptyModel: return "EmptyModel";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ZOutOfRange: return "ZOutOfRange";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Input-side failures (bad files, bad config) as opposed to computation failures.
  bool is_input_error() const noexcept {
    return code_ == ErrorCode::ParseError || code_ == ErrorCode::InvalidConfig ||
           code_ == ErrorCode::Io || code_ == ErrorCode::InvalidArgument ||
           code_ == ErrorCode::LengthMismatch || code_ == ErrorCode::EmptyMesh;
  }

 private:
  ErrorCode code_;
};

}  // namespace bico
