#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "tagsynth/backends.hpp"
#include "tagsynth/filter.hpp"
#include "tagsynth/manifest.hpp"
#include "tagsynth/path_engine.hpp"
#include "tagsynth/policy.hpp"

namespace tagsynth {

inline constexpr size_t kCheckpointEvery = 256;

struct JobSpec {
  std::string job_id;  // directory name under jobs_dir
  SynthesisPath path;
  Variant variant = Variant::kCap;
  TextPolicy text_policy;
  ImagePolicy image_policy;
  FilterConfig filter;
  std::uint64_t seed = 0;
  size_t shards = 1;
  size_t workers_per_shard = 4;  // in-flight record executions per shard
  size_t checkpoint_every = kCheckpointEvery;
  bool resume = false;
  std::filesystem::path jobs_dir = "jobs";
  std::string config_digest;  // stamps the output and every checkpoint
  std::string output_name = "synthetic";
  const TemplateRegistry* registry = nullptr;

  // Testing aid: abort with SimulatedCrash once this many chunk commits have
  // happened across all shards (0 disables).
  size_t crash_after_commits = 0;
};

struct SimulatedCrash : std::runtime_error {
  SimulatedCrash() : std::runtime_error("simulated crash") {}
};

// Per-shard resume state, stored as jobs/<job-id>/shard-<k>.checkpoint.json.
struct JobCheckpoint {
  std::string job_id;
  size_t shard = 0;
  size_t shards = 1;
  size_t committed = 0;  // records of this shard already decided
  std::string last_committed_id;
  std::uint64_t data_bytes = 0;  // valid prefix of the shard outcome file
  std::map<std::string, size_t> counts;
  std::string config_digest;

  nlohmann::ordered_json to_json() const;
  static JobCheckpoint from_json(const nlohmann::json& j);
};

struct JobResult {
  Manifest output;
  FilterReport report;
  size_t resumed_records = 0;    // skipped because an earlier run committed them
  size_t transport_failures = 0; // quarantines caused by exhausted retries
};

// Executes the path for every record, pairs the variant, filters, and
// returns passed records in input order. Throws Error(kCheckpoint) when
// resuming against a different configuration.
JobResult run_synthesis_job(const Manifest& input, const JobSpec& spec, ModelStack& models);

// Path of the checkpoint and outcome files for one shard.
std::filesystem::path checkpoint_path(const JobSpec& spec, size_t shard);
std::filesystem::path shard_data_path(const JobSpec& spec, size_t shard);

}  // namespace tagsynth
