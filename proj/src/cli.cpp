#include "tagsynth/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "tagsynth/digest.hpp"
#include "tagsynth/fs_util.hpp"
#include "tagsynth/job.hpp"
#include "tagsynth/manifest.hpp"
#include "tagsynth/path_engine.hpp"
#include "tagsynth/stats.hpp"

namespace tagsynth {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kPrecondition:
    case ErrorCode::kManifest:
    case ErrorCode::kCheckpoint:
      return kExitConfig;
    case ErrorCode::kTransport:
    case ErrorCode::kDegenerate:
    case ErrorCode::kParse:
      return kExitBackend;
    case ErrorCode::kIo:
      return kExitFailure;
  }
  return kExitFailure;
}

namespace {

json read_json_file(const std::string& path) {
  auto text = read_file(path);
  if (!text) throw Error(ErrorCode::kConfig, "cannot read " + path);
  auto j = json::parse(*text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kConfig, path + " is not valid JSON");
  return j;
}

std::string read_input(const std::string& path, const char* what) {
  auto text = read_file(path);
  if (!text) throw Error(ErrorCode::kIo, std::string("cannot read ") + what + " " + path);
  return *text;
}

template <class Policy>
Policy find_policy(const std::vector<Policy>& all, const std::string& id, const std::string& file) {
  for (const auto& p : all)
    if (p.id == id) return p;
  throw Error(ErrorCode::kConfig, "policy '" + id + "' not found in " + file);
}

TextPolicy resolve_text_policy(const json& j) {
  const json& ref = j.at("text_policy");
  if (ref.is_number_integer()) return make_text_policy(ref.get<int>(), "template-" + ref.dump());
  if (ref.is_object()) return text_policy_from_json(ref);
  if (ref.is_string()) {
    if (!j.contains("text_policies"))
      throw Error(ErrorCode::kConfig, "text_policy '" + ref.get<std::string>() +
                                          "' given by id but no text_policies file is set");
    std::string file = j["text_policies"].get<std::string>();
    return find_policy(load_text_policies(file), ref.get<std::string>(), file);
  }
  throw Error(ErrorCode::kConfig, "text_policy must be a template number, object or id");
}

ImagePolicy resolve_image_policy(const json& j) {
  const json& ref = j.at("image_policy");
  if (ref.is_object()) return image_policy_from_json(ref);
  if (ref.is_string()) {
    std::string s = ref.get<std::string>();
    if (j.contains("image_policies")) {
      std::string file = j["image_policies"].get<std::string>();
      return find_policy(load_image_policies(file), s, file);
    }
    ImagePolicy p;
    p.style = parse_image_style(s);
    p.id = "style-" + s;
    return p;
  }
  throw Error(ErrorCode::kConfig, "image_policy must be a style name, object or id");
}

// Backend configs a path actually needs.
std::vector<std::pair<std::string, const BackendConfig*>> required_backends(
    const JobConfig& cfg, const SynthesisPath& path) {
  std::vector<std::pair<std::string, const BackendConfig*>> need;
  bool tagger = path.visits(NodeId::kTagger) || cfg.filter.check_image;
  if (tagger) {
    need.emplace_back("captioner", &cfg.backends.captioner);
    need.emplace_back("extractor", &cfg.backends.extractor);
    need.emplace_back("classifier", &cfg.backends.classifier);
  }
  if (path.visits(NodeId::kLanguageModel)) need.emplace_back("llm", &cfg.backends.llm);
  if (path.visits(NodeId::kImageModel)) need.emplace_back("t2i", &cfg.backends.t2i);
  return need;
}

ordered_json to_ordered(const json& j) { return ordered_json::parse(j.dump()); }

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  size_t shards = 1;
  bool mock = false;
  int mock_latency_ms = 0;
  bool dry_run = false;
  bool force = false;
  std::string store;
  std::string image_root;
  std::string jobs_dir;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* shards_opt = nullptr;
  CLI::Option* latency_opt = nullptr;
  CLI::Option* store_opt = nullptr;
  CLI::Option* image_root_opt = nullptr;
  CLI::Option* jobs_dir_opt = nullptr;
};

// Config file merged with global flag overrides.
json base_config(const Globals& g) {
  json j = g.config.empty() ? json::object() : read_json_file(g.config);
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "config must be a JSON object");
  if (g.seed_opt->count()) j["seed"] = g.seed;
  if (g.shards_opt->count()) j["shards"] = g.shards;
  if (g.mock) j["mock"] = true;
  if (g.latency_opt->count()) j["mock_latency_ms"] = g.mock_latency_ms;
  if (g.store_opt->count()) j["image_store"] = g.store;
  if (g.image_root_opt->count()) j["image_root"] = g.image_root;
  if (g.jobs_dir_opt->count()) j["jobs_dir"] = g.jobs_dir;
  return j;
}

ModelStack build_stack(const JobConfig& cfg) {
  auto store = std::make_shared<ImageStore>(cfg.image_store);
  if (cfg.mock) return make_mock_stack(store, MockOptions{std::chrono::milliseconds(cfg.mock_latency_ms)});
  return make_http_stack(cfg.backends, store, cfg.image_root);
}

enum class OutputState { kFresh, kUpToDate };

// Refuses to clobber an output stamped with another config unless forced.
OutputState check_output(const std::string& path, const std::optional<std::string>& existing_digest,
                         const std::string& digest, bool force) {
  if (force || !fs::exists(path)) return OutputState::kFresh;
  if (existing_digest && *existing_digest == digest) return OutputState::kUpToDate;
  throw Error(ErrorCode::kConfig, "output " + path +
                                      " exists with a different config digest; pass --force to overwrite");
}

std::optional<std::string> manifest_digest_of(const std::string& path) {
  try {
    auto h = read_manifest_header(path);
    if (h) return h->config_digest;
  } catch (const Error&) {
  }
  return std::nullopt;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_error(std::ostream& err, const Error& e, int exit) {
  ordered_json j;
  j["code"] = to_string(e.code());
  j["message"] = e.what();
  if (!e.stage().empty()) j["stage"] = e.stage();
  if (auto* pe = dynamic_cast<const PathError*>(&e)) {
    j["rule"] = to_string(pe->rule());
    j["index"] = pe->index();
  }
  if (e.attempts() > 0) j["attempts"] = e.attempts();
  j["exit"] = exit;
  ordered_json wrap;
  wrap["error"] = std::move(j);
  err << wrap.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct RunFlags {
  std::string input, output, path, variant, text_policy, text_policies, image_style, image_policy,
      image_policies, match_mode, job_id;
  int text_template = 0;
  double p_f = 0;
  std::vector<std::string> apply_to;
  bool no_plural_folding = false;
  bool resume = false;
  size_t workers = 0, checkpoint_every = 0;
};

void apply_policy_flags(json& j, const std::string& text_policy, const std::string& text_policies,
                        int text_template, const std::string& image_style,
                        const std::string& image_policy, const std::string& image_policies) {
  if (!text_policies.empty()) j["text_policies"] = text_policies;
  if (text_template) j["text_policy"] = text_template;
  if (!text_policy.empty()) j["text_policy"] = text_policy;
  if (!image_policies.empty()) j["image_policies"] = image_policies;
  if (!image_style.empty()) {
    j["image_policy"] = image_style;
    j.erase("image_policies");
  }
  if (!image_policy.empty()) j["image_policy"] = image_policy;
}

int cmd_run(const Globals& g, const RunFlags& f, CLI::App& sub, std::ostream& out) {
  json j = base_config(g);
  if (!f.input.empty()) j["input"] = f.input;
  if (!f.output.empty()) j["output"] = f.output;
  if (!f.path.empty()) j["path"] = f.path;
  if (!f.variant.empty()) j["variant"] = f.variant;
  if (!f.job_id.empty()) j["job_id"] = f.job_id;
  if (f.workers) j["workers_per_shard"] = f.workers;
  if (f.checkpoint_every) j["checkpoint_every"] = f.checkpoint_every;
  apply_policy_flags(j, f.text_policy, f.text_policies, f.text_template, f.image_style,
                     f.image_policy, f.image_policies);
  if (!j.contains("filter")) j["filter"] = json::object();
  if (sub.get_option("--p-f")->count()) j["filter"]["p_f"] = f.p_f;
  if (!f.apply_to.empty()) j["filter"]["apply_to"] = f.apply_to;
  if (!f.match_mode.empty()) j["filter"]["mode"] = f.match_mode;
  if (f.no_plural_folding) j["filter"]["plural_folding"] = false;

  JobConfig cfg = JobConfig::from_json(j);
  cfg.validate();
  if (cfg.input.empty()) throw Error(ErrorCode::kConfig, "run needs an input manifest (--input)");
  if (cfg.output.empty()) throw Error(ErrorCode::kConfig, "run needs an output path (--out)");

  std::string text = read_input(cfg.input, "input manifest");
  Manifest input = parse_manifest(text, cfg.input);
  ordered_json canonical = canonical_run_config(cfg, sha256_hex(text));
  std::string digest = config_digest(canonical);
  SynthesisPath path = parse_path_literal(cfg.path);

  if (g.dry_run) {
    ordered_json r;
    r["dry_run"] = true;
    r["config_digest"] = digest;
    r["records"] = input.size();
    r["path"] = path.literal();
    r["variant"] = cfg.variant;
    r["backend_calls"] = 0;
    out << r.dump() << "\n";
    return kExitOk;
  }
  if (check_output(cfg.output, manifest_digest_of(cfg.output), digest, g.force) ==
      OutputState::kUpToDate) {
    out << "up to date: " << cfg.output << " (config " << digest.substr(0, 16) << ")\n";
    return kExitOk;
  }

  TemplateRegistry registry = cfg.registry();
  ModelStack models = build_stack(cfg);
  JobSpec spec;
  spec.job_id = cfg.job_id.empty() ? "job-" + digest.substr(0, 12) : cfg.job_id;
  spec.path = path;
  spec.variant = parse_variant(cfg.variant);
  spec.text_policy = cfg.text_policy;
  spec.image_policy = cfg.image_policy;
  spec.filter = cfg.filter;
  spec.seed = cfg.seed;
  spec.shards = cfg.shards;
  spec.workers_per_shard = cfg.workers_per_shard;
  spec.checkpoint_every = cfg.checkpoint_every;
  spec.resume = f.resume;
  spec.jobs_dir = cfg.jobs_dir;
  spec.config_digest = digest;
  // Named after the input and variant so the bytes do not depend on where
  // the output is written.
  spec.output_name = fs::path(cfg.input).stem().string() + "-" + cfg.variant;
  spec.registry = &registry;

  auto t0 = std::chrono::steady_clock::now();
  JobResult result = run_synthesis_job(input, spec, models);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ordered_json report = result.report.to_json();
  report["config_digest"] = digest;
  write_file_atomic(cfg.output + ".report.json", report.dump(2) + "\n");
  write_file_atomic(cfg.output + ".ratios.csv", result.report.histogram_csv());
  write_manifest(cfg.output, result.output);

  const FilterReport& rep = result.report;
  size_t fresh = rep.evaluated - result.resumed_records;
  out << "evaluated " << rep.evaluated << " passed " << rep.passed << " rejected " << rep.rejected
      << " quarantined " << rep.quarantined << " pass_rate " << fixed(rep.pass_rate(), 3) << "\n";
  out << "resumed " << result.resumed_records << " throughput "
      << fixed(secs > 0 ? fresh / secs : 0.0, 1) << " rec/s\n";
  out << "wrote " << cfg.output << " (" << result.output.size() << " records, config "
      << digest.substr(0, 16) << ")\n";

  if (rep.quarantined == 0) return kExitOk;
  if (rep.quarantined == rep.evaluated && result.transport_failures > 0) return kExitBackend;
  return kExitPartial;
}

struct MixFlags {
  std::string original, rule, output;
  std::vector<std::string> synthetic;
  double p_r = 0.5;
  size_t total = 0;
};

int cmd_mix(const Globals& g, const MixFlags& f, CLI::App& sub, std::ostream& out) {
  json j = base_config(g);
  json& m = j["mix"];
  if (!m.is_object()) m = json::object();
  if (!f.original.empty()) m["original"] = f.original;
  if (!f.synthetic.empty()) m["synthetic"] = f.synthetic;
  if (!f.rule.empty()) m["rule"] = f.rule;
  if (sub.get_option("--p-r")->count()) m["p_r"] = f.p_r;
  if (f.total) m["total"] = f.total;
  if (g.seed_opt->count()) m["seed"] = g.seed;
  if (!f.output.empty()) m["output"] = f.output;

  JobConfig cfg = JobConfig::from_json(j);
  cfg.mix.validate();
  std::string output = m.value("output", std::string());
  if (cfg.mix_original.empty()) throw Error(ErrorCode::kConfig, "mix needs --original");
  if (output.empty()) throw Error(ErrorCode::kConfig, "mix needs an output path (--out)");
  if (cfg.mix_total < 1) throw Error(ErrorCode::kConfig, "total must be >= 1");

  ordered_json canonical;
  canonical["kind"] = "mix";
  canonical["rule"] = to_string(cfg.mix.rule);
  canonical["p_r"] = cfg.mix.p_r;
  canonical["seed"] = cfg.mix.seed;
  canonical["total"] = cfg.mix_total;
  std::string otext = read_input(cfg.mix_original, "manifest");
  canonical["original"] = sha256_hex(otext);
  Manifest original = parse_manifest(otext, cfg.mix_original);
  std::vector<Manifest> synthetic;
  canonical["synthetic"] = ordered_json::array();
  for (const auto& p : cfg.mix_synthetic) {
    std::string t = read_input(p, "manifest");
    canonical["synthetic"].push_back(sha256_hex(t));
    synthetic.push_back(parse_manifest(t, p));
  }
  std::string digest = config_digest(canonical);

  if (g.dry_run) {
    out << ordered_json{{"dry_run", true}, {"config_digest", digest}}.dump() << "\n";
    return kExitOk;
  }
  if (check_output(output, manifest_digest_of(output), digest, g.force) == OutputState::kUpToDate) {
    out << "up to date: " << output << " (config " << digest.substr(0, 16) << ")\n";
    return kExitOk;
  }
  Manifest mixed = mix_manifests(original, synthetic, cfg.mix, cfg.mix_total);
  mixed.header.config_digest = digest;
  write_manifest(output, mixed);

  size_t real = 0;
  for (const auto& r : mixed.records) real += r.origin == Origin::kReal;
  double n = mixed.empty() ? 1.0 : static_cast<double>(mixed.size());
  out << "records " << mixed.size() << " original_fraction " << fixed(real / n, 4)
      << " synthetic_fraction " << fixed((mixed.size() - real) / n, 4) << "\n";
  return kExitOk;
}

struct StatsFlags {
  std::vector<std::string> manifests;
  std::string out_json, out_csv;
};

int cmd_stats(const Globals& g, const StatsFlags& f, std::ostream& out) {
  ordered_json canonical;
  canonical["kind"] = "stats";
  canonical["manifests"] = ordered_json::array();
  std::vector<Manifest> manifests;
  std::vector<std::string> names;
  for (const auto& p : f.manifests) {
    std::string t = read_input(p, "manifest");
    canonical["manifests"].push_back(sha256_hex(t));
    manifests.push_back(parse_manifest(t, p));
    names.push_back(fs::path(p).filename().string());
  }
  std::string digest = config_digest(canonical);
  if (g.dry_run) {
    out << ordered_json{{"dry_run", true}, {"config_digest", digest}}.dump() << "\n";
    return kExitOk;
  }
  if (!f.out_json.empty()) {
    std::optional<std::string> existing;
    if (auto t = read_file(f.out_json)) {
      auto j = json::parse(*t, nullptr, false);
      if (j.is_object() && j.contains("config_digest") && j["config_digest"].is_string())
        existing = j["config_digest"].get<std::string>();
    }
    if (check_output(f.out_json, existing, digest, g.force) == OutputState::kUpToDate) {
      out << "up to date: " << f.out_json << "\n";
      return kExitOk;
    }
  }
  StatsReport report = compute_stats(manifests, names);
  ordered_json j;
  j["config_digest"] = digest;
  j["manifests"] = report.to_json()["manifests"];
  if (!f.out_csv.empty()) write_file_atomic(f.out_csv, report.word_histogram_csv());
  if (f.out_json.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_file_atomic(f.out_json, j.dump(2) + "\n");
    for (const auto& s : report.manifests)
      out << s.name << ": count " << s.count << " mean_words " << fixed(s.mean_words, 2)
          << " median_words " << fixed(s.median_words, 1) << "\n";
  }
  return kExitOk;
}

int cmd_tag(const Globals& g, const std::string& image, std::ostream& out) {
  JobConfig cfg = JobConfig::from_json(base_config(g));
  if (!cfg.mock)
    for (const char* name : {"captioner", "extractor", "classifier"}) {
      const BackendConfig& b = std::string(name) == "captioner"   ? cfg.backends.captioner
                               : std::string(name) == "extractor" ? cfg.backends.extractor
                                                                  : cfg.backends.classifier;
      b.validate(name);
    }
  if (g.dry_run) {
    out << ordered_json{{"dry_run", true}, {"image", image}}.dump() << "\n";
    return kExitOk;
  }
  ModelStack models = build_stack(cfg);
  TaggingTrace t = models.tag_image_traced(ImageRef{image});
  ordered_json j;
  j["image"] = image;
  j["caption"] = t.caption;
  j["labels"] = t.labels;
  j["tags"] = {{"attributes", t.tags.attributes()},
               {"objects", t.tags.objects()},
               {"relations", t.tags.relations()}};
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct SynthTextFlags {
  std::vector<std::string> objects, attributes, relations;
  std::string caption, text_policy, text_policies;
  int text_template = 0;
  bool show_instruction = false;
};

int cmd_synth_text(const Globals& g, const SynthTextFlags& f, std::ostream& out) {
  json j = base_config(g);
  apply_policy_flags(j, f.text_policy, f.text_policies, f.text_template, "", "", "");
  JobConfig cfg = JobConfig::from_json(j);
  TemplateRegistry registry = cfg.registry();
  cfg.text_policy.validate(&registry);
  if (!cfg.mock) cfg.backends.llm.validate("llm");
  VisualTags tags(f.objects, f.attributes, f.relations);
  if (tags.empty()) throw Error(ErrorCode::kConfig, "synth-text needs at least one tag");
  std::optional<std::string> caption;
  if (!f.caption.empty()) caption = f.caption;
  Instruction ins = render_text_instruction(tags, caption, cfg.text_policy, &registry);
  if (g.dry_run) {
    out << ins.rendered_text << "\n";
    return kExitOk;
  }
  ModelStack models = build_stack(cfg);
  std::string text = models.generate_text(ins);
  if (f.show_instruction) out << "instruction: " << ins.rendered_text << "\n";
  out << text << "\n";
  return kExitOk;
}

struct SynthImageFlags {
  std::string text, style, image_policy, image_policies;
  std::vector<std::string> weights;
};

int cmd_synth_image(const Globals& g, const SynthImageFlags& f, std::ostream& out) {
  json j = base_config(g);
  apply_policy_flags(j, "", "", 0, f.style, f.image_policy, f.image_policies);
  JobConfig cfg = JobConfig::from_json(j);
  ImagePolicy policy = cfg.image_policy;
  for (const auto& w : f.weights) {
    auto eq = w.rfind('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "weight must be tag=value: " + w);
    try {
      policy.tag_weights[normalize_tag(w.substr(0, eq))] = std::stod(w.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kConfig, "weight must be tag=value: " + w);
    }
  }
  policy.validate();
  if (!cfg.mock) cfg.backends.t2i.validate("t2i");
  std::string prompt = render_image_instruction(f.text, policy);
  if (g.dry_run) {
    out << prompt << "\n";
    return kExitOk;
  }
  ModelStack models = build_stack(cfg);
  ImageRef ref = models.generate_image(prompt, cfg.seed);
  ordered_json r;
  r["prompt"] = prompt;
  r["seed"] = cfg.seed;
  r["image_ref"] = ref.value;
  out << r.dump(2) << "\n";
  return kExitOk;
}

int cmd_validate_path(const std::string& literal, std::ostream& out) {
  SynthesisPath p = parse_path_literal(literal);
  ordered_json j;
  j["valid"] = true;
  j["name"] = p.name;
  j["path"] = p.literal();
  j["nodes"] = ordered_json::array();
  for (NodeId n : p.nodes) j["nodes"].push_back(to_string(n));
  j["text_side_input"] = p.text_side_input;
  out << j.dump() << "\n";
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// JobConfig
// ---------------------------------------------------------------------------

JobConfig JobConfig::from_json(const json& j) {
  JobConfig c;
  try {
    if (j.contains("backends")) c.backends = backends_config_from_json(j["backends"]);
    else c.backends = backends_config_from_json(json::object());
    c.mock = j.value("mock", c.mock);
    c.mock_latency_ms = j.value("mock_latency_ms", c.mock_latency_ms);
    c.path = j.value("path", c.path);
    c.variant = j.value("variant", c.variant);
    if (j.contains("text_policy")) c.text_policy = resolve_text_policy(j);
    if (j.contains("image_policy")) c.image_policy = resolve_image_policy(j);
    if (j.contains("custom_templates"))
      c.custom_templates = j["custom_templates"].get<std::map<std::string, std::string>>();
    if (j.contains("filter")) c.filter = filter_config_from_json(j["filter"]);
    if (j.contains("mix")) {
      const json& m = j["mix"];
      c.mix.p_r = m.value("p_r", c.mix.p_r);
      c.mix.seed = m.value("seed", c.mix.seed);
      if (m.contains("rule")) c.mix.rule = parse_mix_rule(m["rule"].get<std::string>());
      c.mix_total = m.value("total", c.mix_total);
      c.mix_original = m.value("original", c.mix_original);
      c.mix_synthetic = m.value("synthetic", c.mix_synthetic);
    }
    c.shards = j.value("shards", c.shards);
    c.workers_per_shard = j.value("workers_per_shard", c.workers_per_shard);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    c.input = j.value("input", c.input);
    c.output = j.value("output", c.output);
    c.jobs_dir = j.value("jobs_dir", c.jobs_dir);
    c.job_id = j.value("job_id", c.job_id);
    c.image_store = j.value("image_store", c.image_store);
    c.image_root = j.value("image_root", c.image_root);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid config: ") + e.what());
  }
  return c;
}

TemplateRegistry JobConfig::registry() const {
  TemplateRegistry r;
  for (const auto& [name, text] : custom_templates) r.add_custom(name, text);
  return r;
}

void JobConfig::validate() const {
  if (shards < 1) throw Error(ErrorCode::kConfig, "shards must be >= 1");
  if (workers_per_shard < 1) throw Error(ErrorCode::kConfig, "workers_per_shard must be >= 1");
  if (checkpoint_every < 1) throw Error(ErrorCode::kConfig, "checkpoint_every must be >= 1");
  if (mock_latency_ms < 0) throw Error(ErrorCode::kConfig, "mock latency must be >= 0");
  SynthesisPath p = parse_path_literal(path);
  Variant v = parse_variant(variant);
  auto [image_node, text_node] = variant_nodes(v);
  for (NodeId n : {image_node, text_node})
    if ((n == NodeId::kSynthImage || n == NodeId::kSynthText) && !p.visits(n))
      throw Error(ErrorCode::kConfig, std::string("variant ") + variant + " needs node " +
                                          to_string(n) + " on the path " + p.literal());
  filter.validate();
  TemplateRegistry reg = registry();
  check_path_policies(p, text_policy, &reg);
  image_policy.validate();
  mix.validate();
  if (!mock)
    for (const auto& [name, b] : required_backends(*this, p)) b->validate(name);
}

ordered_json canonical_run_config(const JobConfig& cfg, const std::string& input_sha256) {
  SynthesisPath p = parse_path_literal(cfg.path);
  ordered_json j;
  j["kind"] = "run";
  j["template_registry_version"] = TemplateRegistry::kVersion;
  j["path"] = p.literal();
  j["path_name"] = p.name;
  j["variant"] = cfg.variant;
  j["text_policy"] = to_ordered(to_json(cfg.text_policy));
  j["image_policy"] = to_ordered(to_json(cfg.image_policy));
  j["custom_templates"] = cfg.custom_templates;
  j["filter"] = to_json(cfg.filter);
  j["seed"] = cfg.seed;
  j["input_sha256"] = input_sha256;
  if (cfg.mock) {
    j["backends"] = "mock";
  } else {
    ordered_json b = to_ordered(to_json(cfg.backends));
    // Operational knobs only affect throughput.
    for (auto& [name, one] : b.items()) {
      one.erase("timeout_s");
      one.erase("max_in_flight");
      one.erase("retry");
      one.erase("token_env");
    }
    j["backends"] = std::move(b);
  }
  return j;
}

std::string config_digest(const ordered_json& canonical) { return sha256_hex(canonical.dump()); }

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tagsynth: controllable image-text data synthesis", "tagsynth"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON job config; flags override its fields");
  g.seed_opt = app.add_option("--seed", g.seed, "job seed (mix seed for `mix`)");
  g.shards_opt = app.add_option("--shards", g.shards, "concurrent shards for `run`");
  app.add_flag("--mock", g.mock, "use deterministic mock backends");
  g.latency_opt = app.add_option("--mock-latency-ms", g.mock_latency_ms, "simulated mock latency");
  app.add_flag("--dry-run", g.dry_run, "validate only; no backend calls");
  app.add_flag("--force", g.force, "overwrite outputs stamped with another config");
  g.store_opt = app.add_option("--store", g.store, "content-addressed image store directory");
  g.image_root_opt = app.add_option("--image-root", g.image_root, "directory for plain image refs");
  g.jobs_dir_opt = app.add_option("--jobs-dir", g.jobs_dir, "checkpoint directory root");

  RunFlags rf;
  auto* run = app.add_subcommand("run", "synthesize, filter and write a manifest");
  run->add_option("--input", rf.input, "input manifest");
  run->add_option("--out", rf.output, "output manifest");
  run->add_option("--path", rf.path, "path literal or built-in name (sp1..sp4, sp_text_loop)");
  run->add_option("--variant", rf.variant, "cap, img or capimg");
  run->add_option("--text-template", rf.text_template, "built-in text template 1-10");
  run->add_option("--text-policy", rf.text_policy, "text policy id");
  run->add_option("--text-policies", rf.text_policies, "text policy file (JSON or JSONL)");
  run->add_option("--image-style", rf.image_style, "real, nocap, isometric, enhance, quality");
  run->add_option("--image-policy", rf.image_policy, "image policy id");
  run->add_option("--image-policies", rf.image_policies, "image policy file (JSON or JSONL)");
  run->add_option("--p-f", rf.p_f, "filter threshold");
  run->add_option("--apply-to", rf.apply_to, "filter checks: text, image")->delimiter(',');
  run->add_option("--match-mode", rf.match_mode, "exact-token or all-content-words");
  run->add_flag("--no-plural-folding", rf.no_plural_folding);
  run->add_flag("--resume", rf.resume, "continue from checkpoints");
  run->add_option("--job-id", rf.job_id, "checkpoint directory name");
  run->add_option("--workers", rf.workers, "in-flight records per shard");
  run->add_option("--checkpoint-every", rf.checkpoint_every, "records per checkpoint commit");

  MixFlags mf;
  auto* mix = app.add_subcommand("mix", "mix original and synthetic manifests");
  mix->add_option("--original", mf.original, "original manifest");
  mix->add_option("--synthetic", mf.synthetic, "synthetic manifest (repeatable)");
  mix->add_option("--rule", mf.rule, "ratio or paper_mix");
  mix->add_option("--p-r", mf.p_r, "probability of drawing an original record");
  mix->add_option("--total", mf.total, "records to draw (ratio rule)");
  mix->add_option("--out", mf.output, "output manifest");

  StatsFlags sf;
  auto* stats = app.add_subcommand("stats", "word-count and filter-ratio statistics");
  stats->add_option("manifests", sf.manifests, "manifest files")->required();
  stats->add_option("--out-json", sf.out_json, "stats JSON path (default stdout)");
  stats->add_option("--out-csv", sf.out_csv, "word histogram CSV path");

  std::string tag_image;
  auto* tag = app.add_subcommand("tag", "tag a single image");
  tag->add_option("--image", tag_image, "image ref or file name")->required();

  SynthTextFlags tf;
  auto* stext = app.add_subcommand("synth-text", "tags and a text policy to text");
  stext->add_option("--objects", tf.objects)->delimiter(',');
  stext->add_option("--attributes", tf.attributes)->delimiter(',');
  stext->add_option("--relations", tf.relations)->delimiter(',');
  stext->add_option("--caption", tf.caption, "original text for templates 6-10");
  stext->add_option("--text-template", tf.text_template, "built-in text template 1-10");
  stext->add_option("--text-policy", tf.text_policy, "text policy id");
  stext->add_option("--text-policies", tf.text_policies, "text policy file");
  stext->add_flag("--show-instruction", tf.show_instruction);

  SynthImageFlags imf;
  auto* simage = app.add_subcommand("synth-image", "text and an image policy to an image");
  simage->add_option("--text", imf.text, "prompt text")->required();
  simage->add_option("--style", imf.style, "image style");
  simage->add_option("--image-policy", imf.image_policy, "image policy id");
  simage->add_option("--image-policies", imf.image_policies, "image policy file");
  simage->add_option("--weight", imf.weights, "tag=weight (repeatable)");

  std::string literal;
  auto* vpath = app.add_subcommand("validate-path", "check a path literal");
  vpath->add_option("path", literal, "path literal or built-in name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    print_error(err, Error(ErrorCode::kConfig, e.what()), kExitConfig);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(g, rf, *run, out);
    if (*mix) return cmd_mix(g, mf, *mix, out);
    if (*stats) return cmd_stats(g, sf, out);
    if (*tag) return cmd_tag(g, tag_image, out);
    if (*stext) return cmd_synth_text(g, tf, out);
    if (*simage) return cmd_synth_image(g, imf, out);
    if (*vpath) return cmd_validate_path(literal, out);
  } catch (const Error& e) {
    int code = exit_code_for(e.code());
    print_error(err, e, code);
    return code;
  } catch (const SimulatedCrash&) {
    throw;
  } catch (const std::exception& e) {
    print_error(err, Error(ErrorCode::kIo, e.what()), kExitFailure);
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace tagsynth
