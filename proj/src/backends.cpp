#include "tagsynth/backends.hpp"

#include <algorithm>
#include <cstdlib>

#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/policy.hpp"

namespace tagsynth {

const std::string_view kExtractionPrompt = R"PROMPT(For a given image caption, identify all the attributes, objects or entities, and visual relationships or actions that are phrases. The phrases should only come from the caption. Separate the phrases by comma without formatting. Output three lines:
attributes: phrases
objects: phrases
relations: phrases

Examples:

caption: The image is a close-up portrait of a middle-aged man wearing a white cowboy hat. He appears to be in his late 60s or early 70s, with gray hair and a serious expression on his face. He is wearing a dark suit jacket and a light blue collared shirt. The background is a clear blue sky with trees visible in the distance. The man is looking off to the side with a slight smile on his lips.
attributes: close-up, middle-aged, white cowboy hat, gray hair, serious expression, light blue
objects: portrait, man, hat, face, dark suit jacket, shirt, blue sky, trees, lips
relations: wearing a, visible in the distance, looking off to the side, slight smile on his lips

caption: The image shows a female singer performing on a stage. She is standing on a set of stairs with her legs spread apart and holding a microphone in her hand. The stage is lit up with red and blue lights and there is a large circular screen in the background. The singer is wearing a black and white patterned outfit with high heels. She appears to be in the middle of a song or performance.
attributes: female singer, stage, set of stairs, red and blue lights, large circular screen, black and white patterned outfit, high heels
objects: female singer, stage, set of stairs, legs, microphone, screen, outfit, high heels, song, performance
relations: performing on a stage, standing on, her legs spread apart, holding, lit up, background, wearing, in the middle of a song

caption: {caption})PROMPT";

const std::string_view kExtractionReminder =
    "\n\nAnswer with exactly three lines that start with \"attributes:\", \"objects:\" and "
    "\"relations:\".";

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// Runs `fn`, recording stage, attempts, latency and payload digest. Errors
// are re-labelled with the stage.
template <typename Fn>
auto recorded_call(CallLog& log, const std::string& stage, std::string_view payload, Fn&& fn) {
  CallRecord rec;
  rec.stage = stage;
  rec.node = node_for_stage(stage);
  rec.payload_digest = sha256_hex(payload);
  auto start = Clock::now();
  try {
    auto reply = fn();
    rec.attempts = reply.attempts;
    rec.latency_ms = ms_since(start);
    rec.ok = true;
    log.record(std::move(rec));
    return reply.value;
  } catch (const Error& e) {
    rec.attempts = e.attempts();
    rec.latency_ms = ms_since(start);
    log.record(std::move(rec));
    if (e.stage().empty()) rethrow_with_stage(e, stage);
    throw;
  } catch (const std::exception& e) {
    rec.latency_ms = ms_since(start);
    log.record(std::move(rec));
    throw Error(ErrorCode::kTransport, e.what(), stage);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void BackendConfig::validate(const std::string& name) const {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kConfig, "backend " + name + ": " + what);
  };
  if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://"))
    fail("endpoint '" + endpoint + "' is not an http(s) URL");
  if (max_in_flight < 1) fail("max_in_flight must be >= 1");
  if (!(timeout_s > 0)) fail("timeout must be > 0");
  if (retry.max_attempts < 1) fail("retry.max_attempts must be >= 1");
  if (retry.backoff_base_s < 0) fail("retry.backoff_base_s must be >= 0");
  if (max_tokens < 1) fail("max_tokens must be >= 1");
  if (!(guidance_scale > 0)) fail("guidance_scale must be > 0");
  if (diffusion_steps < 1) fail("diffusion_steps must be >= 1");
}

std::optional<std::string> BackendConfig::resolved_token() const {
  if (auth_token) return auth_token;
  if (!token_env.empty())
    if (const char* v = std::getenv(token_env.c_str()); v && *v) return std::string(v);
  return std::nullopt;
}

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  try {
    c.endpoint = j.value("endpoint", c.endpoint);
    if (j.contains("auth_token") && !j["auth_token"].is_null())
      c.auth_token = j["auth_token"].get<std::string>();
    c.token_env = j.value("token_env", c.token_env);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (j.contains("retry")) {
      c.retry.max_attempts = j["retry"].value("max_attempts", c.retry.max_attempts);
      c.retry.backoff_base_s = j["retry"].value("backoff_base_s", c.retry.backoff_base_s);
    }
    c.model = j.value("model", c.model);
    std::string decoding = j.value("decoding", std::string("greedy"));
    if (decoding == "greedy") c.decoding = Decoding::kGreedy;
    else if (decoding == "sample") c.decoding = Decoding::kSample;
    else throw Error(ErrorCode::kConfig, "unknown decoding '" + decoding + "'");
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid backend config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const BackendConfig& c) {
  // The token itself never goes into configs that get digested or logged.
  return {{"endpoint", c.endpoint},
          {"token_env", c.token_env},
          {"timeout_s", c.timeout_s},
          {"max_in_flight", c.max_in_flight},
          {"retry", {{"max_attempts", c.retry.max_attempts},
                     {"backoff_base_s", c.retry.backoff_base_s}}},
          {"model", c.model},
          {"decoding", c.decoding == Decoding::kGreedy ? "greedy" : "sample"},
          {"temperature", c.temperature},
          {"max_tokens", c.max_tokens},
          {"guidance_scale", c.guidance_scale},
          {"diffusion_steps", c.diffusion_steps}};
}

void BackendsConfig::validate() const {
  captioner.validate("captioner");
  extractor.validate("extractor");
  classifier.validate("classifier");
  llm.validate("llm");
  t2i.validate("t2i");
}

BackendsConfig backends_config_from_json(const nlohmann::json& j) {
  BackendsConfig c;
  auto read = [&](const char* key, BackendConfig& dst, const char* env) {
    dst.token_env = env;
    if (j.contains(key)) {
      dst = backend_config_from_json(j[key]);
      if (dst.token_env.empty()) dst.token_env = env;
    }
  };
  read("captioner", c.captioner, "TAGSYNTH_CAPTIONER_TOKEN");
  read("extractor", c.extractor, "TAGSYNTH_EXTRACTOR_TOKEN");
  read("classifier", c.classifier, "TAGSYNTH_CLASSIFIER_TOKEN");
  read("llm", c.llm, "TAGSYNTH_LLM_TOKEN");
  read("t2i", c.t2i, "TAGSYNTH_T2I_TOKEN");
  return c;
}

nlohmann::json to_json(const BackendsConfig& c) {
  return {{"captioner", to_json(c.captioner)},
          {"extractor", to_json(c.extractor)},
          {"classifier", to_json(c.classifier)},
          {"llm", to_json(c.llm)},
          {"t2i", to_json(c.t2i)}};
}

// ---------------------------------------------------------------------------
// Call log
// ---------------------------------------------------------------------------

const char* node_for_stage(std::string_view stage) {
  if (stage == "llm") return "2b";
  if (stage == "t2i") return "2c";
  return "2a";
}

void CallLog::record(CallRecord rec) {
  std::lock_guard<std::mutex> lock(mu_);
  records_.push_back(std::move(rec));
}

std::vector<CallRecord> CallLog::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return records_;
}

size_t CallLog::count(std::string_view stage) const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<size_t>(std::count_if(records_.begin(), records_.end(),
                                           [&](const CallRecord& r) { return r.stage == stage; }));
}

size_t CallLog::count_node(std::string_view node) const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<size_t>(std::count_if(records_.begin(), records_.end(),
                                           [&](const CallRecord& r) { return r.node == node; }));
}

void CallLog::clear() {
  std::lock_guard<std::mutex> lock(mu_);
  records_.clear();
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

ExtractionOutput parse_extraction_output(std::string_view raw) {
  static constexpr std::string_view kLabels[3] = {"attributes:", "objects:", "relations:"};
  std::optional<std::string> found[3];

  size_t pos = 0;
  while (pos <= raw.size()) {
    size_t end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    std::string_view line = raw.substr(pos, end - pos);
    std::string low = lower_ascii(line);
    // The earliest label on the line wins; anything before it is chatter.
    size_t best = std::string::npos;
    int which = -1;
    for (int i = 0; i < 3; ++i) {
      size_t at = low.find(kLabels[i]);
      if (at != std::string::npos && at < best) {
        best = at;
        which = i;
      }
    }
    if (which >= 0 && !found[which])
      found[which] = std::string(line.substr(best + kLabels[which].size()));
    pos = end + 1;
  }

  for (int i = 0; i < 3; ++i)
    if (!found[i]) {
      std::string name(kLabels[i].substr(0, kLabels[i].size() - 1));
      throw Error(ErrorCode::kParse, "missing " + name);
    }

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
      size_t comma = s.find(',', start);
      if (comma == std::string::npos) comma = s.size();
      std::string tag = normalize_tag(std::string_view(s).substr(start, comma - start));
      if (!tag.empty() && std::find(out.begin(), out.end(), tag) == out.end())
        out.push_back(std::move(tag));
      start = comma + 1;
    }
    return out;
  };

  ExtractionOutput out;
  out.attributes = split(*found[0]);
  out.objects = split(*found[1]);
  out.relations = split(*found[2]);
  out.raw_text = std::string(raw);
  return out;
}

std::string render_extraction_prompt(std::string_view caption) {
  return substitute(kExtractionPrompt, {{"caption", std::string(caption)}});
}

// ---------------------------------------------------------------------------
// Model stack
// ---------------------------------------------------------------------------

std::string ModelStack::generate_caption(const ImageRef& image) {
  std::string caption = recorded_call(*log, "captioner", image.value,
                                      [&] { return captioner->caption(image); });
  caption = trim(caption);
  if (caption.empty()) throw Error(ErrorCode::kDegenerate, "degenerate caption", "captioner");
  return caption;
}

ExtractionOutput ModelStack::extract_tags_from_caption(const std::string& caption) {
  if (trim(caption).empty())
    throw Error(ErrorCode::kPrecondition, "caption must be non-empty", "extractor");
  std::string prompt = render_extraction_prompt(caption);
  std::string reply =
      recorded_call(*log, "extractor", prompt, [&] { return extractor->complete(prompt); });
  try {
    return parse_extraction_output(reply);
  } catch (const Error& first) {
    if (first.code() != ErrorCode::kParse) throw;
  }
  std::string retry_prompt = prompt + std::string(kExtractionReminder);
  reply = recorded_call(*log, "extractor", retry_prompt,
                        [&] { return extractor->complete(retry_prompt); });
  try {
    return parse_extraction_output(reply);
  } catch (const Error& second) {
    if (second.code() != ErrorCode::kParse) throw;
    throw Error(ErrorCode::kParse, std::string("unparseable extraction: ") + second.what(),
                "extractor");
  }
}

std::vector<std::string> ModelStack::classify_labels(const ImageRef& image, int k) {
  if (k < 1) throw Error(ErrorCode::kPrecondition, "k must be >= 1", "classifier");
  auto labels = recorded_call(*log, "classifier", image.value + "#" + std::to_string(k),
                              [&] { return classifier->classify(image, k); });
  std::vector<std::string> out;
  for (auto& l : labels) {
    std::string tag = normalize_tag(l);
    if (!tag.empty() && std::find(out.begin(), out.end(), tag) == out.end())
      out.push_back(std::move(tag));
    if (out.size() == static_cast<size_t>(k)) break;
  }
  return out;
}

TaggingTrace ModelStack::tag_image_traced(const ImageRef& image) {
  TaggingTrace trace;
  trace.caption = generate_caption(image);
  trace.extraction = extract_tags_from_caption(trace.caption);
  trace.labels = classify_labels(image, kDefaultClassifierTopK);
  trace.tags = merge_tag_sets(trace.extraction.tags(), trace.labels);
  return trace;
}

std::string ModelStack::generate_text(const Instruction& instruction) {
  const std::string& prompt = instruction.rendered_text;
  std::string text = recorded_call(*log, "llm", prompt, [&] { return llm->complete(prompt); });
  text = trim(text);
  if (text.empty()) throw Error(ErrorCode::kDegenerate, "degenerate generation", "llm");
  return text;
}

ImageRef ModelStack::generate_image(const std::string& prompt, std::uint64_t seed) {
  if (trim(prompt).empty()) throw Error(ErrorCode::kPrecondition, "empty image prompt", "t2i");
  return recorded_call(*log, "t2i", prompt + "#" + std::to_string(seed),
                       [&] { return t2i->generate(prompt, seed); });
}

}  // namespace tagsynth
