#include "dietcap/error.hpp"

namespace dietcap {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Dimension: return "E_DIMENSION";
    case ErrorCode::Numeric: return "E_NUMERIC";
    case ErrorCode::Index: return "E_INDEX";
    case ErrorCode::Usage: return "E_USAGE";
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Data: return "E_DATA";
    case ErrorCode::Input: return "E_INPUT";
    case ErrorCode::Length: return "E_LENGTH";
    case ErrorCode::Lookup: return "E_LOOKUP";
    case ErrorCode::Degenerate: return "E_DEGENERATE";
    case ErrorCode::Reconstruction: return "E_RECONSTRUCTION";
    case ErrorCode::NoEmpty: return "E_NO_EMPTY";
    case ErrorCode::UndefinedRate: return "E_UNDEFINED_RATE";
    case ErrorCode::Spec: return "E_SPEC";
    case ErrorCode::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage:
    case ErrorCode::Config:
      return 2;
    case ErrorCode::Input:
    case ErrorCode::Io:
    case ErrorCode::Data:
    case ErrorCode::Spec:
      return 3;
    case ErrorCode::NoEmpty:
    case ErrorCode::Reconstruction:
    case ErrorCode::Degenerate:
      return 4;
    default:
      return 1;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), detail_(message) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace dietcap
