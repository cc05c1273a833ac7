#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tagsynth/backends.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/filter.hpp"
#include "tagsynth/mixing.hpp"
#include "tagsynth/policy.hpp"

namespace tagsynth {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,       // I/O and anything unclassified
  kExitConfig = 2,
  kExitBackend = 3,       // retries exhausted or unusable model output
  kExitPartial = 4,       // some records quarantined
};

int exit_code_for(ErrorCode code);

// Everything a run or mix needs. Loaded from --config and then overridden by
// flags; validated before any backend is contacted.
struct JobConfig {
  BackendsConfig backends;
  bool mock = false;
  int mock_latency_ms = 0;

  std::string path = "sp1";  // built-in name or literal
  std::string variant = "cap";
  TextPolicy text_policy = make_text_policy(1);
  ImagePolicy image_policy;
  std::map<std::string, std::string> custom_templates;
  FilterConfig filter;

  MixConfig mix;
  size_t mix_total = 1000;
  std::string mix_original;
  std::vector<std::string> mix_synthetic;

  size_t shards = 1;
  size_t workers_per_shard = 4;
  size_t checkpoint_every = 256;
  std::uint64_t seed = 0;

  std::string input;
  std::string output;
  std::string jobs_dir = "jobs";
  std::string job_id;  // defaults to one derived from the config digest
  std::string image_store = "store";
  std::string image_root;  // directory for plain image refs

  // Resolves policy references relative to the process working directory.
  static JobConfig from_json(const nlohmann::json& j);
  void validate() const;
  TemplateRegistry registry() const;
};

// Canonical run config: everything that changes the output, nothing that only
// changes throughput or locations.
nlohmann::ordered_json canonical_run_config(const JobConfig& cfg, const std::string& input_sha256);
std::string config_digest(const nlohmann::ordered_json& canonical);

// Entry point used by the binary and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tagsynth
