#include "tmaseg/error.hpp"

namespace tmaseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PatchLargerThanCore: return "PatchLargerThanCore";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace tmaseg
