#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dietcap {

// Machine-readable error classes. The CLI prints the class name and maps it to
// an exit code, so new values need a name in error.cpp.
enum class ErrorCode {
  Dimension,
  Numeric,
  Index,
  Usage,
  Config,
  Data,
  Input,
  Length,
  Lookup,
  Degenerate,
  Reconstruction,
  NoEmpty,
  UndefinedRate,
  Spec,
  Io,
};

std::string_view error_code_name(ErrorCode code);
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // The message without the class prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace dietcap
