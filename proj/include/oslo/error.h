#pragma once

#include <stdexcept>
#include <string>

namespace oslo {

enum class ErrorCode {
  kInvalidResolution,
  kIndex,
  kInvalidInput,
  kShape,
  kGrid,
  kResolution,
  kConfig,
  kUsage,
  kCorruptStream,
  kWrongModel,
  kUnsupportedVersion,
  kParse,
  kIncomparableCurves,
  kIo,
  kDiverged,
};

const char* error_code_name(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace oslo
