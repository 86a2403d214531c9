#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmaseg {

enum class ErrorCode {
  FileNotFound,
  DecodeError,
  IoError,
  InvalidArgument,
  PatchLargerThanCore,
  DimensionMismatch,
  CountMismatch,
  DegenerateInput,
  ParseError,
  ShapeMismatch,
  NotScalar,
  MissingGradient,
  InvalidConfig,
  AlignmentError,
  EmptySplit,
  BadMagic,
  VersionUnsupported,
  TruncatedFile,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code and a
// message naming the offending file, parameter or value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tmaseg
