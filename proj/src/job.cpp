#include "tagsynth/job.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <thread>

#include "tagsynth/error.hpp"
#include "tagsynth/fs_util.hpp"
#include "tagsynth/parallel.hpp"

namespace tagsynth {

namespace {

// One decided record as stored in a shard outcome file.
struct Outcome {
  size_t seq = 0;
  std::string id;
  Decision decision;
  std::string error_code;  // set for quarantines raised as Error
  std::optional<SampleRecord> record;  // present when passed
};

nlohmann::ordered_json outcome_to_json(const Outcome& o) {
  nlohmann::ordered_json j;
  j["seq"] = o.seq;
  j["id"] = o.id;
  j["status"] = to_string(o.decision.kind);
  if (o.decision.ratio) j["ratio"] = *o.decision.ratio;
  if (!o.decision.reason.empty()) j["reason"] = o.decision.reason;
  if (!o.error_code.empty()) j["code"] = o.error_code;
  if (o.record) j["record"] = to_json(*o.record);
  return j;
}

Outcome outcome_from_json(const nlohmann::json& j) {
  Outcome o;
  o.seq = j.at("seq").get<size_t>();
  o.id = j.at("id").get<std::string>();
  std::string status = j.at("status").get<std::string>();
  o.decision.kind = status == "pass"     ? DecisionKind::kPass
                    : status == "reject" ? DecisionKind::kReject
                                         : DecisionKind::kError;
  if (j.contains("ratio")) o.decision.ratio = j["ratio"].get<double>();
  o.decision.reason = j.value("reason", std::string());
  o.error_code = j.value("code", std::string());
  if (j.contains("record")) o.record = record_from_json(j["record"]);
  return o;
}

FilterCandidate make_candidate(const PathExecution& exec, const SampleRecord& paired,
                               Variant variant) {
  FilterCandidate c;
  c.record = paired;
  auto [image_node, text_node] = variant_nodes(variant);
  if (text_node == NodeId::kSynthText) {
    c.tags = exec.rendered_tags;
    c.synthetic_text = paired.text;
  }
  if (image_node == NodeId::kSynthImage) {
    c.synthetic_image = paired.image_ref;
    // The text that was fed to the image controller.
    const auto& nodes = exec.path.nodes;
    for (size_t i = nodes.size(); i-- > 1;) {
      if (nodes[i] == NodeId::kImageController) {
        c.starting_text = exec.text_of(nodes[i - 1]);
        break;
      }
    }
  }
  return c;
}

Outcome process_record(const SampleRecord& rec, size_t seq, const JobSpec& spec,
                       ModelStack& models) {
  Outcome o;
  o.seq = seq;
  o.id = rec.id;
  try {
    std::uint64_t seed = derive_seed(spec.seed, rec.id, spec.path.name);
    PathExecution exec = execute_path(spec.path, rec, spec.text_policy, spec.image_policy, seed,
                                      models, spec.registry);
    SampleRecord paired = pair_outputs(exec, rec, spec.variant);
    o.decision = evaluate_candidate(make_candidate(exec, paired, spec.variant), spec.filter,
                                    &models);
    if (o.decision.passed()) {
      paired.provenance->filter_ratio = o.decision.ratio;
      o.record = std::move(paired);
    }
  } catch (const Error& e) {
    std::string stage = e.stage().empty() ? "job" : e.stage();
    o.decision = {DecisionKind::kError, std::nullopt, stage + ": " + e.what()};
    o.error_code = to_string(e.code());
  }
  return o;
}

std::optional<JobCheckpoint> load_checkpoint(const std::filesystem::path& p) {
  auto text = read_file(p);
  if (!text) return std::nullopt;
  auto j = nlohmann::json::parse(*text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kCheckpoint, "corrupt checkpoint " + p.string());
  return JobCheckpoint::from_json(j);
}

class ShardRunner {
 public:
  ShardRunner(const Manifest& input, const JobSpec& spec, ModelStack& models, size_t shard,
              std::atomic<size_t>& commits, std::atomic<bool>& stop)
      : input_(input), spec_(spec), models_(models), shard_(shard), commits_(commits),
        stop_(stop) {
    size_t n = input.records.size();
    begin_ = shard * n / spec.shards;
    end_ = (shard + 1) * n / spec.shards;
  }

  // Returns the number of records skipped thanks to an earlier checkpoint.
  size_t run() {
    auto ckpt_path = checkpoint_path(spec_, shard_);
    auto data_path = shard_data_path(spec_, shard_);
    JobCheckpoint ckpt;
    ckpt.job_id = spec_.job_id;
    ckpt.shard = shard_;
    ckpt.shards = spec_.shards;
    ckpt.config_digest = spec_.config_digest;

    if (spec_.resume) {
      if (auto prev = load_checkpoint(ckpt_path)) {
        if (prev->config_digest != spec_.config_digest)
          throw Error(ErrorCode::kCheckpoint,
                      "config digest mismatch: checkpoint " + prev->config_digest +
                          " vs job " + spec_.config_digest + "; refusing to resume");
        if (prev->shards != spec_.shards)
          throw Error(ErrorCode::kCheckpoint, "checkpoint was written with " +
                                                  std::to_string(prev->shards) + " shards, job has " +
                                                  std::to_string(spec_.shards));
        ckpt = *prev;
      }
    }
    // Drop anything appended after the last commit.
    if (std::filesystem::exists(data_path)) std::filesystem::resize_file(data_path, ckpt.data_bytes);
    else std::ofstream(data_path, std::ios::binary).close();

    size_t skipped = ckpt.committed;
    size_t next = begin_ + ckpt.committed;
    while (next < end_) {
      if (stop_) return skipped;
      size_t chunk_end = std::min(end_, next + spec_.checkpoint_every);
      std::vector<Outcome> outcomes(chunk_end - next);
      parallel_for(outcomes.size(), spec_.workers_per_shard, [&](size_t i) {
        outcomes[i] = process_record(input_.records[next + i], next + i, spec_, models_);
      });
      if (stop_) return skipped;
      commit(ckpt, outcomes, data_path, ckpt_path);
      next = chunk_end;
      size_t done = ++commits_;
      if (spec_.crash_after_commits && done >= spec_.crash_after_commits && next < end_) {
        stop_ = true;
        throw SimulatedCrash();
      }
    }
    return skipped;
  }

 private:
  void commit(JobCheckpoint& ckpt, const std::vector<Outcome>& outcomes,
              const std::filesystem::path& data_path, const std::filesystem::path& ckpt_path) {
    std::string lines;
    for (const auto& o : outcomes) {
      lines += outcome_to_json(o).dump() + "\n";
      ++ckpt.counts[to_string(o.decision.kind)];
    }
    {
      std::ofstream out(data_path, std::ios::binary | std::ios::app);
      out.write(lines.data(), static_cast<std::streamsize>(lines.size()));
      out.flush();
      if (!out) throw Error(ErrorCode::kIo, "cannot append to " + data_path.string());
    }
    ckpt.committed += outcomes.size();
    ckpt.last_committed_id = outcomes.back().id;
    ckpt.data_bytes += lines.size();
    write_file_atomic(ckpt_path, ckpt.to_json().dump(2) + "\n");
  }

  const Manifest& input_;
  const JobSpec& spec_;
  ModelStack& models_;
  size_t shard_;
  size_t begin_ = 0;
  size_t end_ = 0;
  std::atomic<size_t>& commits_;
  std::atomic<bool>& stop_;
};

}  // namespace

nlohmann::ordered_json JobCheckpoint::to_json() const {
  nlohmann::ordered_json j;
  j["job_id"] = job_id;
  j["shard"] = shard;
  j["shards"] = shards;
  j["committed"] = committed;
  j["last_committed_id"] = last_committed_id;
  j["data_bytes"] = data_bytes;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : counts) c[k] = v;
  j["counts"] = std::move(c);
  j["config_digest"] = config_digest;
  return j;
}

JobCheckpoint JobCheckpoint::from_json(const nlohmann::json& j) {
  JobCheckpoint c;
  try {
    c.job_id = j.at("job_id").get<std::string>();
    c.shard = j.at("shard").get<size_t>();
    c.shards = j.at("shards").get<size_t>();
    c.committed = j.at("committed").get<size_t>();
    c.last_committed_id = j.value("last_committed_id", std::string());
    c.data_bytes = j.at("data_bytes").get<std::uint64_t>();
    c.counts = j.value("counts", std::map<std::string, size_t>{});
    c.config_digest = j.at("config_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpoint, std::string("invalid checkpoint: ") + e.what());
  }
  return c;
}

std::filesystem::path checkpoint_path(const JobSpec& spec, size_t shard) {
  return spec.jobs_dir / spec.job_id / ("shard-" + std::to_string(shard) + ".checkpoint.json");
}

std::filesystem::path shard_data_path(const JobSpec& spec, size_t shard) {
  return spec.jobs_dir / spec.job_id / ("shard-" + std::to_string(shard) + ".outcomes.jsonl");
}

JobResult run_synthesis_job(const Manifest& input, const JobSpec& spec, ModelStack& models) {
  if (spec.shards < 1) throw Error(ErrorCode::kConfig, "shards must be >= 1");
  if (spec.checkpoint_every < 1) throw Error(ErrorCode::kConfig, "checkpoint_every must be >= 1");
  if (spec.job_id.empty()) throw Error(ErrorCode::kConfig, "job id must be set");
  spec.filter.validate();
  check_path_policies(spec.path, spec.text_policy, spec.registry);
  spec.image_policy.validate();

  auto job_dir = spec.jobs_dir / spec.job_id;
  if (!spec.resume && std::filesystem::exists(job_dir)) std::filesystem::remove_all(job_dir);
  std::filesystem::create_directories(job_dir);

  std::atomic<size_t> commits{0};
  std::atomic<bool> stop{false};
  std::vector<size_t> skipped(spec.shards, 0);
  std::vector<std::exception_ptr> errors(spec.shards);
  {
    std::vector<std::thread> threads;
    for (size_t s = 0; s < spec.shards; ++s) {
      threads.emplace_back([&, s] {
        try {
          skipped[s] = ShardRunner(input, spec, models, s, commits, stop).run();
        } catch (...) {
          errors[s] = std::current_exception();
          stop = true;
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  JobResult result;
  result.report.config = spec.filter;
  result.output.header.name = spec.output_name;
  result.output.header.variant = to_string(spec.variant);
  result.output.header.config_digest = spec.config_digest;
  nlohmann::ordered_json meta;
  meta["path"] = spec.path.literal();
  meta["path_name"] = spec.path.name;
  meta["seed"] = spec.seed;
  meta["text_policy"] = spec.text_policy.id;
  meta["image_policy"] = spec.image_policy.id;
  meta["filter"] = to_json(spec.filter);
  meta["classifier_labels_routed_to"] = "objects";
  result.output.header.meta = std::move(meta);

  for (size_t s = 0; s < spec.shards; ++s) {
    result.resumed_records += skipped[s];
    auto ckpt = load_checkpoint(checkpoint_path(spec, s));
    auto data = read_file(shard_data_path(spec, s)).value_or("");
    if (ckpt) data.resize(std::min<size_t>(data.size(), ckpt->data_bytes));
    size_t pos = 0;
    while (pos < data.size()) {
      size_t end = data.find('\n', pos);
      if (end == std::string::npos) end = data.size();
      Outcome o = outcome_from_json(nlohmann::json::parse(data.substr(pos, end - pos)));
      pos = end + 1;
      if (o.decision.kind == DecisionKind::kError && o.error_code == to_string(ErrorCode::kTransport))
        ++result.transport_failures;
      if (o.record) result.output.records.push_back(std::move(*o.record));
      result.report.add({o.id, o.decision});
    }
  }
  result.output.header.count = result.output.records.size();
  return result;
}

}  // namespace tagsynth
