#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmr {

/// Failure categories. Each maps to a distinct process exit code in the CLI.
enum class ErrorCode {
  kInternal,
  kUsage,
  kIo,
  kParse,
  kValidation,
  kDecode,
  // embedding file
  kMagicMismatch,
  kVersionMismatch,
  kTruncated,
  kDuplicateId,
  // external embedder
  kProcessExited,
  kMalformedResponse,
  kDimMismatch,
  kTimeout,
  kEmbedderFailure,
  kDivergence,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Process exit code for an error category (never 0).
int exit_code_for(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xmr
