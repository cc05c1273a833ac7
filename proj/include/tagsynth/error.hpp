#pragma once

#include <stdexcept>
#include <string>

namespace tagsynth {

enum class ErrorCode {
  kConfig,        // invalid configuration, path or policy
  kPrecondition,  // operation called with inputs it does not accept
  kParse,         // model output or file content could not be parsed
  kTransport,     // backend unreachable or failing after all retries
  kDegenerate,    // backend answered but the answer is unusable
  kManifest,      // manifest content violates its schema
  kCheckpoint,    // resume refused or checkpoint unreadable
  kIo,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library. `stage` names the pipeline stage or
// path node the failure came from, empty when it does not apply.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {})
      : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

  ErrorCode code() const { return code_; }
  const std::string& stage() const { return stage_; }

  // True for failures a later rerun may fix (transport problems).
  bool retryable() const { return code_ == ErrorCode::kTransport; }

  // Attempts spent before giving up; 0 when no backend call was involved.
  int attempts() const { return attempts_; }
  Error& set_attempts(int n) {
    attempts_ = n;
    return *this;
  }

 private:
  ErrorCode code_;
  std::string stage_;
  int attempts_ = 0;
};

// Re-throws `e` with `stage` prefixed, keeping the original code.
[[noreturn]] void rethrow_with_stage(const Error& e, const std::string& stage);

}  // namespace tagsynth
