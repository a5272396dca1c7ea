#include "xmrbench/error.hpp"

namespace xmr {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInternal: return "internal";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kMagicMismatch: return "magic-mismatch";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDuplicateId: return "duplicate-id";
    case ErrorCode::kProcessExited: return "process-exited";
    case ErrorCode::kMalformedResponse: return "malformed-response";
    case ErrorCode::kDimMismatch: return "dim-mismatch";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kEmbedderFailure: return "embedder-failure";
    case ErrorCode::kDivergence: return "divergence";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInternal: return 1;
    case ErrorCode::kUsage: return 2;
    case ErrorCode::kIo: return 3;
    case ErrorCode::kParse: return 4;
    case ErrorCode::kValidation: return 5;
    case ErrorCode::kDecode: return 6;
    case ErrorCode::kMagicMismatch:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kTruncated:
    case ErrorCode::kDuplicateId: return 7;
    case ErrorCode::kProcessExited:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kDimMismatch:
    case ErrorCode::kTimeout:
    case ErrorCode::kEmbedderFailure: return 8;
    case ErrorCode::kDivergence: return 9;
  }
  return 1;
}

}  // namespace xmr
