// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "fake_server.hpp"
#include "oracles.hpp"
#include "tagsynth/backends.hpp"
#include "tagsynth/cli.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/filter.hpp"
#include "tagsynth/fs_util.hpp"
#include "tagsynth/job.hpp"
#include "tagsynth/longtail.hpp"
#include "tagsynth/manifest.hpp"
#include "tagsynth/mixing.hpp"
#include "tagsynth/path_engine.hpp"
#include "tagsynth/policy.hpp"

using namespace tagsynth;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Collects failures for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  bool ok() const { return failed_ == 0; }
  size_t checks() const { return checks_; }
  std::string summary() const {
    std::string s = std::to_string(failed_) + " of " + std::to_string(checks_) + " checks failed";
    for (const auto& f : failures_) s += "; " + f;
    return s;
  }

 private:
  size_t checks_ = 0;
  size_t failed_ = 0;
  std::vector<std::string> failures_;
};

nlohmann::json golden(const std::string& name) {
  auto text = read_file(std::string(TAGSYNTH_GOLDEN_DIR) + "/" + name);
  if (!text) throw std::runtime_error("missing golden file " + name);
  return nlohmann::json::parse(*text);
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

Manifest real_manifest(size_t n) {
  Manifest m;
  m.header.name = "real";
  m.header.variant = "real";
  for (size_t i = 0; i < n; ++i) {
    char id[32], img[32];
    std::snprintf(id, sizeof id, "r%05zu", i);
    std::snprintf(img, sizeof img, "img_%03zu", i % 1000);
    SampleRecord r;
    r.id = id;
    r.image_ref = ImageRef{img};
    r.text = "a photo of item " + std::to_string(i) + " on a table";
    m.records.push_back(r);
  }
  return m;
}

Manifest synthetic_manifest(const Manifest& real, const std::string& variant, size_t keep) {
  Manifest m;
  m.header.name = variant;
  m.header.variant = variant;
  for (size_t i = 0; i < keep && i < real.size(); ++i) {
    SampleRecord s = real.records[i];
    s.id += "#" + variant;
    s.origin = Origin::kSynthetic;
    s.text = "synthetic " + variant + " text " + std::to_string(i);
    s.provenance = Provenance{real.records[i].id, "sp3", {"text-default"}, i, 0.5};
    m.records.push_back(s);
  }
  return m;
}

// ---------------------------------------------------------------------------

void ac1_templates(Check& c) {
  auto g = golden("templates.json");
  const auto& t = g["tags"];
  VisualTags tags(t["objects"].get<std::vector<std::string>>(),
                  t["attributes"].get<std::vector<std::string>>(),
                  t["relations"].get<std::vector<std::string>>());
  c.expect(g["text"].size() == 10, "expected 10 text templates");
  c.expect(g["image"].size() == 5, "expected 5 image templates");
  for (const auto& tc : g["text"]) {
    int id = tc["template_id"].get<int>();
    std::optional<std::string> caption;
    if (!tc["caption"].is_null()) caption = tc["caption"].get<std::string>();
    auto ins = render_text_instruction(tags, caption, make_text_policy(id));
    c.expect(ins.rendered_text == tc["expected"].get<std::string>(),
             "text template " + std::to_string(id));
  }
  for (const auto& ic : g["image"]) {
    ImagePolicy p;
    p.style = parse_image_style(ic["style"].get<std::string>());
    c.expect(render_image_instruction(ic["prompt"].get<std::string>(), p) ==
                 ic["expected"].get<std::string>(),
             "image style " + ic["style"].get<std::string>());
  }
}

void ac2_extraction(Check& c) {
  auto g = golden("extraction_examples.json");
  c.expect(g.size() == 2, "expected 2 examples");
  for (const auto& ex : g) {
    auto out = parse_extraction_output(ex["answer"].get<std::string>());
    c.expect(out.attributes == ex["attributes"].get<std::vector<std::string>>(), "attributes");
    c.expect(out.objects == ex["objects"].get<std::vector<std::string>>(), "objects");
    c.expect(out.relations == ex["relations"].get<std::vector<std::string>>(), "relations");
  }
}

void ac3_paths(Check& c) {
  for (const char* name : {"sp1", "sp2", "sp3", "sp4", "sp_text_loop"}) {
    try {
      const auto& p = builtin_paths().at(name);
      validate_path(p.nodes, p.text_side_input);
      c.expect(true, name);
    } catch (const std::exception& e) {
      c.expect(false, std::string(name) + ": " + e.what());
    }
  }
  std::mt19937 rng(1234);
  ModelStack models = make_mock_stack();
  SampleRecord input;
  input.id = "fuzz";
  input.image_ref = ImageRef{"img_042"};
  input.text = "a striped cat sleeping on a wooden bench";
  size_t accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> names = oracle::random_sequence(rng, rng() % 2 == 0);
    std::vector<NodeId> nodes;
    std::string lit;
    for (const auto& s : names) {
      nodes.push_back(*parse_node_id(s));
      lit += (lit.empty() ? "" : "->") + s;
    }
    bool side = rng() % 4 == 0;
    auto broken = oracle::violated_rules(names, side);
    try {
      SynthesisPath p = validate_path(nodes, side);
      ++accepted;
      c.expect(broken.empty(), "accepted path breaks a rule: " + lit);
      try {
        auto e = execute_path(p, input, make_text_policy(side ? 7 : 1), {}, i, models);
        c.expect(!e.steps.empty() && e.steps.back().node == nodes.back(), "bad end node: " + lit);
      } catch (const std::exception& e) {
        c.expect(false, "execution failed: " + lit + ": " + e.what());
      }
    } catch (const PathError& e) {
      c.expect(broken.count(to_string(e.rule())) > 0,
               "rejected " + lit + " for " + to_string(e.rule()));
    }
  }
  c.expect(accepted >= 100, "only " + std::to_string(accepted) + " fuzzed paths were accepted");
}

void ac4_filter(Check& c) {
  std::mt19937 rng(4242);
  const std::vector<std::string> vocab = {"cat", "cats", "glass", "glasses", "box", "boxes",
                                          "bus", "on", "of", "the", "front", "red", "sky",
                                          "tree", "trees", "near", "wooden", "table", "dress"};
  auto phrase = [&](int n) {
    std::string s;
    for (int k = 0; k < n; ++k) s += (k ? " " : "") + vocab[rng() % vocab.size()];
    return s;
  };
  const double grid[] = {0.0, 0.1, 0.2, 0.3, 0.5, 1.0};
  std::vector<std::set<int>> passed(6);
  int cases = 0;
  while (cases < 500) {
    std::vector<std::string> lists[3];
    for (auto& l : lists)
      for (int k = 0, n = rng() % 3; k < n; ++k) l.push_back(phrase(1 + rng() % 2));
    VisualTags tags(lists[0], lists[1], lists[2]);
    if (tags.empty()) continue;
    std::string text = phrase(rng() % 12);
    double expect = oracle::ratio(tags.all(), text, true, true);
    for (int g = 0; g < 6; ++g) {
      FilterConfig cfg;
      cfg.p_f = grid[g];
      auto d = filter_text_sample(tags, text, cfg);
      c.expect(d.passed() == (expect >= grid[g]), "decision differs for '" + text + "'");
      if (d.passed()) passed[g].insert(cases);
    }
    ++cases;
  }
  for (int g = 1; g < 6; ++g)
    c.expect(std::includes(passed[g - 1].begin(), passed[g - 1].end(), passed[g].begin(),
                           passed[g].end()),
             "passed sets not nested");
  c.expect(FilterConfig{}.p_f == 0.2, "default threshold");
}

void ac5_mixing(Check& c) {
  Manifest real = real_manifest(200);
  Manifest cap = synthetic_manifest(real, "cap", 200);
  Manifest capimg = synthetic_manifest(real, "capimg", 150);
  for (double p : {0.25, 0.5, 0.75}) {
    Manifest out = mix_manifests(real, {cap, capimg}, {p, 2024, MixRule::kRatio}, 10000);
    size_t orig = 0;
    for (const auto& r : out.records) orig += r.origin == Origin::kReal;
    double frac = static_cast<double>(orig) / out.size();
    char buf[96];
    std::snprintf(buf, sizeof buf, "p_r %.2f realized %.4f", p, frac);
    c.expect(out.size() == 10000 && std::abs(frac - p) <= 0.02, buf);
    c.expect(serialize_manifest(out) ==
                 serialize_manifest(mix_manifests(real, {cap, capimg}, {p, 2024, MixRule::kRatio}, 10000)),
             "same seed gave different bytes");
  }
  Manifest pm = mix_manifests(real, {cap, capimg}, {0.5, 0, MixRule::kPaperMix}, 0);
  std::map<std::string, int> per_parent;
  for (const auto& r : pm.records) ++per_parent[r.provenance->parent_id];
  c.expect(per_parent.size() == 150, "shared parents");
  for (const auto& [k, n] : per_parent) c.expect(n == 2, "parent " + k);
}

void ac6_epochs(Check& c) {
  struct Case {
    std::uint64_t n, n2, e;
  };
  for (Case k : {Case{100, 100, 20}, Case{100, 300, 20}, Case{2800, 7900, 32}, Case{7, 0, 3},
                 Case{12, 18, 5}}) {
    // E*N/(N+N') reduced by gcd.
    std::uint64_t num = k.e * k.n, den = k.n + k.n2;
    std::uint64_t g = std::gcd(num, den);
    Fraction got = epoch_budget_exact(k.n, k.n2, k.e);
    c.expect(got == Fraction{num / g, den / g}, "exact fraction");
    c.expect(epoch_budget(k.n, k.n2, static_cast<double>(k.e)) ==
                 static_cast<double>(k.e) * k.n / static_cast<double>(k.n + k.n2),
             "floating value");
  }
}

// Runs the CLI binary in a child process; returns its pid.
pid_t spawn(const std::vector<std::string>& args) {
  pid_t pid = ::fork();
  if (pid == 0) {
    int devnull = ::open("/dev/null", O_WRONLY);
    ::dup2(devnull, 1);
    ::dup2(devnull, 2);
    std::vector<char*> argv;
    std::string bin = TAGSYNTH_CLI_PATH;
    argv.push_back(bin.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv(bin.c_str(), argv.data());
    ::_exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool any_commit(const fs::path& job_dir) {
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(job_dir, ec)) {
    if (e.path().string().find(".checkpoint.json") == std::string::npos) continue;
    auto text = read_file(e.path());
    if (!text) continue;
    auto j = nlohmann::json::parse(*text, nullptr, false);
    if (j.is_object() && j.value("committed", 0) > 0) return true;
  }
  return false;
}

void ac7_resume(Check& c) {
  fs::path dir = oracle::temp_dir("acceptance-ac7");
  Manifest in = real_manifest(1000);
  write_manifest(dir / "in.jsonl", in);

  auto args = [&](const std::string& out, const std::string& job, std::vector<std::string> extra) {
    std::vector<std::string> a{"--mock", "--store", (dir / "store").string(), "--jobs-dir",
                               (dir / "jobs").string(), "--shards", "2", "--seed", "7"};
    a.insert(a.end(), extra.begin(), extra.end());
    a.insert(a.end(), {"run", "--input", (dir / "in.jsonl").string(), "--out",
                       (dir / out).string(), "--path", "sp1", "--variant", "cap", "--job-id", job,
                       "--checkpoint-every", "40"});
    return a;
  };

  c.expect(wait_exit(spawn(args("clean.jsonl", "clean", {}))) == 0, "uninterrupted run");
  auto clean = read_file(dir / "clean.jsonl");
  c.expect(clean.has_value(), "uninterrupted output");

  // Killed with SIGKILL after the first commit, then resumed.
  pid_t pid = spawn(args("killed.jsonl", "killed", {"--mock-latency-ms", "3"}));
  auto start = Clock::now();
  while (!any_commit(dir / "jobs" / "killed") && seconds_since(start) < 30)
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  c.expect(WIFSIGNALED(status), "child was not killed mid-run");
  c.expect(!fs::exists(dir / "killed.jsonl"), "output written before the kill");
  auto resumed = args("killed.jsonl", "killed", {});
  resumed.push_back("--resume");
  c.expect(wait_exit(spawn(resumed)) == 0, "resumed run");
  c.expect(read_file(dir / "killed.jsonl") == clean, "resumed output differs");

  // Same through the in-process crash hook.
  JobSpec spec;
  spec.job_id = "hook";
  spec.path = builtin_paths().at("sp1");
  spec.text_policy = make_text_policy(1);
  spec.seed = 7;
  spec.shards = 3;
  spec.checkpoint_every = 64;
  spec.jobs_dir = dir / "jobs";
  spec.config_digest = "hook";
  std::string reference;
  {
    ModelStack m = make_mock_stack();
    JobSpec s = spec;
    s.job_id = "hook-clean";
    reference = serialize_manifest(run_synthesis_job(in, s, m).output);
  }
  spec.crash_after_commits = 4;
  try {
    ModelStack m = make_mock_stack();
    run_synthesis_job(in, spec, m);
    c.expect(false, "crash hook did not fire");
  } catch (const SimulatedCrash&) {
  }
  spec.crash_after_commits = 0;
  spec.resume = true;
  ModelStack m = make_mock_stack();
  auto r = run_synthesis_job(in, spec, m);
  c.expect(r.resumed_records > 0, "nothing was resumed");
  c.expect(serialize_manifest(r.output) == reference, "hook resume differs");
}

void ac8_closed_loop(Check& c) {
  ModelStack m = make_mock_stack();
  const std::vector<std::string> prompts = {
      "a red double decker bus parked near a fountain", "two cats sleeping on a sofa",
      "a lighthouse on a rocky coast at dusk", "fresh oranges in a wicker basket"};
  const std::vector<std::string> disjoint = {"violin", "glacier", "typewriter", "zebra"};
  for (size_t i = 0; i < prompts.size(); ++i) {
    ImageRef img = m.generate_image(prompts[i], i);
    FilterConfig full;
    full.p_f = 1.0;
    c.expect(filter_image_sample(prompts[i], img, full, m).passed(), "closed loop: " + prompts[i]);
    FilterConfig low;
    low.p_f = 0.05;
    auto d = filter_image_sample(disjoint[i], img, low, m);
    c.expect(d.kind == DecisionKind::kReject, "disjoint text passed: " + disjoint[i]);
  }
}

void ac9_longtail(Check& c) {
  Manifest m;
  auto add = [&](const std::string& cls, int n) {
    for (int i = 0; i < n; ++i) {
      SampleRecord r;
      r.id = cls + "_" + std::to_string(i);
      r.image_ref = ImageRef{"img_" + std::to_string(200 + i)};
      r.class_label = cls;
      m.records.push_back(r);
    }
  };
  add("pangolin", 4);
  add("kakapo", 19);
  add("saola", 2);
  add("dog", 20);
  add("cat", 60);
  TailOptions opts;
  opts.per_class = 7;
  opts.tail_threshold = 20;
  ModelStack models = make_mock_stack();
  auto r = augment_tail_classes(m, opts, models);
  c.expect(r.output.size() == 21, "expected 21 records, got " + std::to_string(r.output.size()));
  c.expect(r.tail_classes.size() == 3, "tail classes");
  ImagePolicy real;
  real.style = ImageStyle::kReal;
  for (const auto& rec : r.output.records) {
    auto meta = models.store->metadata(*rec.image_ref);
    c.expect(meta && (*meta)["prompt"] == render_image_instruction(*rec.class_label, real),
             "record " + rec.id + " not rendered with the real style");
  }
}

void ac10_backends(Check& c) {
  using namespace std::chrono_literals;
  {
    fake::CountingServer server(
        [](int, const nlohmann::json& body, httplib::Response& res) {
          fake::reply_json(res, {{"choices", {{{"message", {{"role", "assistant"},
                                                            {"content", "ok " + body.dump().substr(0, 4)}}}}}}});
        },
        20ms);
    BackendConfig cfg;
    cfg.endpoint = server.url("/v1/chat/completions");
    cfg.max_in_flight = 3;
    cfg.timeout_s = 5;
    HttpChatModel chat(cfg);
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int i = 0; i < 16; ++i)
      threads.emplace_back([&] {
        try {
          chat.complete("hello");
          ++ok;
        } catch (...) {
        }
      });
    for (auto& t : threads) t.join();
    c.expect(ok == 16, "chat calls failed");
    c.expect(server.max_in_flight() <= 3, "bound exceeded: " + std::to_string(server.max_in_flight()));
    c.expect(server.max_in_flight() == 3, "bound never reached");
  }
  {
    fake::CountingServer server([](int n, const nlohmann::json&, httplib::Response& res) {
      if (n <= 2) fake::reply_json(res, {{"error", "busy"}}, 503);
      else fake::reply_json(res, {{"caption", "a cat"}});
    });
    BackendConfig cfg;
    cfg.endpoint = server.url("/caption");
    cfg.retry.max_attempts = 3;
    cfg.retry.backoff_base_s = 0.01;
    HttpCaptioner cap(cfg, nullptr);
    auto reply = cap.caption(ImageRef{"img_001"});
    c.expect(reply.attempts == 3 && server.requests() == 3, "retry then success");
  }
  {
    fake::CountingServer server([](int, const nlohmann::json&, httplib::Response& res) {
      fake::reply_json(res, {{"error", "down"}}, 500);
    });
    BackendConfig cfg;
    cfg.endpoint = server.url("/caption");
    cfg.retry.max_attempts = 4;
    cfg.retry.backoff_base_s = 0.0;
    HttpCaptioner cap(cfg, nullptr);
    try {
      cap.caption(ImageRef{"img_001"});
      c.expect(false, "exhausted retries did not fail");
    } catch (const Error& e) {
      c.expect(e.code() == ErrorCode::kTransport && e.attempts() == 4, "transport error attempts");
    }
    c.expect(server.requests() == 4, "requests on exhaustion");
  }
  {
    fake::CountingServer server([](int, const nlohmann::json&, httplib::Response& res) {
      fake::reply_json(res, {{"error", "bad request"}}, 400);
    });
    BackendConfig cfg;
    cfg.endpoint = server.url("/caption");
    HttpCaptioner cap(cfg, nullptr);
    try {
      cap.caption(ImageRef{"img_001"});
    } catch (const Error&) {
    }
    c.expect(server.requests() == 1, "400 was retried");
  }
}

}  // namespace

int main() {
  struct Criterion {
    int n;
    const char* title;
    std::function<void(Check&)> fn;
    double budget_s;
  };
  const std::vector<Criterion> all = {
      {1, "template fidelity", ac1_templates, 1},
      {2, "extraction parser examples", ac2_extraction, 1},
      {3, "path grammar and 1000 fuzzed paths", ac3_paths, 10},
      {4, "filter oracle equivalence and threshold nesting", ac4_filter, 5},
      {5, "mixing statistics", ac5_mixing, 5},
      {6, "epoch budget", ac6_epochs, 1},
      {7, "end-to-end determinism and crash resume", ac7_resume, 60},
      {8, "closed-loop image filtering", ac8_closed_loop, 5},
      {9, "long-tail augmentation", ac9_longtail, 5},
      {10, "backend concurrency bound and retries", ac10_backends, 30},
  };
  int failed = 0;
  for (const auto& cr : all) {
    Check c;
    auto start = Clock::now();
    try {
      cr.fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    double secs = seconds_since(start);
    c.expect(secs < cr.budget_s, "took " + std::to_string(secs) + " s");
    char head[160];
    std::snprintf(head, sizeof head, "AC%d %s: %s (%zu checks, %.2f s)", cr.n,
                  c.ok() ? "PASS" : "FAIL", cr.title, c.checks(), secs);
    std::cout << head;
    if (!c.ok()) std::cout << " -- " << c.summary();
    std::cout << std::endl;
    failed += !c.ok();
  }
  std::cout << (failed ? "FAILED " + std::to_string(failed) + " criteria" : std::string("ALL PASS"))
            << std::endl;
  return failed ? 1 : 0;
}
