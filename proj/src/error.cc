#include "oslo/error.h"

namespace oslo {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidResolution: return "invalid resolution";
    case ErrorCode::kIndex: return "index error";
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kGrid: return "grid mismatch";
    case ErrorCode::kResolution: return "resolution error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kUsage: return "usage error";
    case ErrorCode::kCorruptStream: return "corrupt stream";
    case ErrorCode::kWrongModel: return "wrong model";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kIncomparableCurves: return "incomparable curves";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kDiverged: return "training diverged";
  }
  return "error";
}

}  // namespace oslo
