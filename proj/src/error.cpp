#include "tagsynth/error.hpp"

namespace tagsynth {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kManifest: return "manifest";
    case ErrorCode::kCheckpoint: return "checkpoint";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void rethrow_with_stage(const Error& e, const std::string& stage) {
  std::string joined = e.stage().empty() ? stage : stage + "/" + e.stage();
  Error out(e.code(), e.what(), joined);
  out.set_attempts(e.attempts());
  throw out;
}

}  // namespace tagsynth
