#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagsynth/image_store.hpp"
#include "tagsynth/tagspace.hpp"

namespace tagsynth {

struct Instruction;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_base_s = 0.5;  // sleep before attempt n+1 is base * 2^(n-1)
};

enum class Decoding { kGreedy, kSample };

struct BackendConfig {
  std::string endpoint;  // full URL, e.g. http://127.0.0.1:8000/v1/chat/completions
  std::optional<std::string> auth_token;
  std::string token_env;  // environment variable consulted when auth_token is unset
  double timeout_s = 120.0;
  int max_in_flight = 4;
  RetryPolicy retry;

  // LLM
  std::string model;
  Decoding decoding = Decoding::kGreedy;
  double temperature = 0.7;  // used only with kSample
  int max_tokens = 512;

  // Text-to-image
  double guidance_scale = 7.0;
  int diffusion_steps = 28;

  void validate(const std::string& name) const;
  std::optional<std::string> resolved_token() const;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendConfig& c);

// One config per model endpoint the hybrid tagger and the synthesis paths use.
struct BackendsConfig {
  BackendConfig captioner;
  BackendConfig extractor;  // LLM that turns captions into tags
  BackendConfig classifier;
  BackendConfig llm;        // LLM that writes synthetic text
  BackendConfig t2i;

  void validate() const;
};

BackendsConfig backends_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendsConfig& c);

// ---------------------------------------------------------------------------
// Call accounting
// ---------------------------------------------------------------------------

struct CallRecord {
  std::string stage;  // captioner, extractor, classifier, llm, t2i
  std::string node;   // path node the stage belongs to: 2a, 2b or 2c
  int attempts = 0;
  double latency_ms = 0.0;
  std::string payload_digest;
  bool ok = false;
};

class CallLog {
 public:
  void record(CallRecord rec);
  std::vector<CallRecord> snapshot() const;
  size_t count(std::string_view stage) const;
  size_t count_node(std::string_view node) const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<CallRecord> records_;
};

const char* node_for_stage(std::string_view stage);

// ---------------------------------------------------------------------------
// Endpoint interfaces
// ---------------------------------------------------------------------------

template <typename T>
struct Reply {
  T value;
  int attempts = 1;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual Reply<std::string> caption(const ImageRef& image) = 0;
};

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual Reply<std::string> complete(const std::string& prompt) = 0;
};

class LabelClassifier {
 public:
  virtual ~LabelClassifier() = default;
  virtual Reply<std::vector<std::string>> classify(const ImageRef& image, int k) = 0;
};

class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  virtual Reply<ImageRef> generate(const std::string& prompt, std::uint64_t seed) = 0;
};

// ---------------------------------------------------------------------------
// Extraction prompt and parser
// ---------------------------------------------------------------------------

// Few-shot tag extraction instruction with a {caption} placeholder.
extern const std::string_view kExtractionPrompt;
// Appended to the prompt when the first reply could not be parsed.
extern const std::string_view kExtractionReminder;
// Captioner task token.
inline constexpr std::string_view kDetailedCaptionTask = "<MORE_DETAILED_CAPTION>";

struct ExtractionOutput {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
  std::vector<std::string> relations;
  std::string raw_text;

  VisualTags tags() const { return VisualTags(objects, attributes, relations); }
};

// Reads the three "attributes:/objects:/relations:" lines. Text before a
// label on the same line is ignored. Throws Error(kParse, "missing <label>").
ExtractionOutput parse_extraction_output(std::string_view raw);

std::string render_extraction_prompt(std::string_view caption);

// ---------------------------------------------------------------------------
// Model stack
// ---------------------------------------------------------------------------

inline constexpr int kDefaultClassifierTopK = 20;

// Everything tag_image did, for provenance.
struct TaggingTrace {
  std::string caption;
  ExtractionOutput extraction;
  std::vector<std::string> labels;
  VisualTags tags;
};

// The three model nodes behind one handle. Shared across workers; every call
// is recorded in the call log.
class ModelStack {
 public:
  std::shared_ptr<Captioner> captioner;
  std::shared_ptr<ChatModel> extractor;
  std::shared_ptr<LabelClassifier> classifier;
  std::shared_ptr<ChatModel> llm;
  std::shared_ptr<ImageGenerator> t2i;
  std::shared_ptr<ImageStore> store;
  std::shared_ptr<CallLog> log = std::make_shared<CallLog>();

  std::string generate_caption(const ImageRef& image);
  ExtractionOutput extract_tags_from_caption(const std::string& caption);
  std::vector<std::string> classify_labels(const ImageRef& image, int k);
  TaggingTrace tag_image_traced(const ImageRef& image);
  VisualTags tag_image(const ImageRef& image) { return tag_image_traced(image).tags; }
  std::string generate_text(const Instruction& instruction);
  ImageRef generate_image(const std::string& prompt, std::uint64_t seed);
};

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

// JSON-over-HTTP POST with a per-client in-flight bound, timeout and
// exponential-backoff retries on connection failures, 408, 429 and 5xx.
class HttpJsonClient {
 public:
  HttpJsonClient(BackendConfig cfg, std::string stage);

  Reply<nlohmann::json> post(const nlohmann::json& body);
  const BackendConfig& config() const { return cfg_; }

 private:
  BackendConfig cfg_;
  std::string stage_;
  std::string scheme_host_port_;
  std::string path_;
  std::counting_semaphore<1 << 20> slots_;
};

class HttpCaptioner final : public Captioner {
 public:
  HttpCaptioner(BackendConfig cfg, std::shared_ptr<ImageStore> store,
                std::filesystem::path image_root = {});
  Reply<std::string> caption(const ImageRef& image) override;

 private:
  HttpJsonClient client_;
  std::shared_ptr<ImageStore> store_;
  std::filesystem::path image_root_;
};

// Chat-completion protocol: {"model", "messages":[{"role":"user",...}]}.
class HttpChatModel final : public ChatModel {
 public:
  explicit HttpChatModel(BackendConfig cfg, std::string stage = "llm");
  Reply<std::string> complete(const std::string& prompt) override;

  nlohmann::json request_body(const std::string& prompt) const;

 private:
  HttpJsonClient client_;
};

class HttpLabelClassifier final : public LabelClassifier {
 public:
  HttpLabelClassifier(BackendConfig cfg, std::shared_ptr<ImageStore> store,
                      std::filesystem::path image_root = {});
  Reply<std::vector<std::string>> classify(const ImageRef& image, int k) override;

 private:
  HttpJsonClient client_;
  std::shared_ptr<ImageStore> store_;
  std::filesystem::path image_root_;
};

class HttpImageGenerator final : public ImageGenerator {
 public:
  HttpImageGenerator(BackendConfig cfg, std::shared_ptr<ImageStore> store);
  Reply<ImageRef> generate(const std::string& prompt, std::uint64_t seed) override;

  nlohmann::json request_body(const std::string& prompt, std::uint64_t seed) const;

 private:
  HttpJsonClient client_;
  std::shared_ptr<ImageStore> store_;
};

// ---------------------------------------------------------------------------
// Deterministic mocks
// ---------------------------------------------------------------------------
//
// Input references like "img_007" caption as
//   "mock caption for img_007 with objects obj7a obj7b"
// and classify as label_007_0 .. label_007_{k-1}. A mock image stores the
// content words of its prompt, and the mock captioner/classifier read them
// back, so re-tagging a generated image yields the prompt's content words.

struct MockOptions {
  std::chrono::milliseconds latency{0};  // simulated per-call latency
};

class MockCaptioner final : public Captioner {
 public:
  explicit MockCaptioner(std::shared_ptr<ImageStore> store, MockOptions opts = {});
  Reply<std::string> caption(const ImageRef& image) override;

 private:
  std::shared_ptr<ImageStore> store_;
  MockOptions opts_;
};

// Answers extraction prompts with the three-line format and any other
// prompt with "SYN[<16 hex of sha256(prompt)>]" followed by a
// hash-selected subset of the prompt's words.
class MockChatModel final : public ChatModel {
 public:
  explicit MockChatModel(MockOptions opts = {});
  Reply<std::string> complete(const std::string& prompt) override;

 private:
  MockOptions opts_;
};

class MockLabelClassifier final : public LabelClassifier {
 public:
  explicit MockLabelClassifier(std::shared_ptr<ImageStore> store, MockOptions opts = {});
  Reply<std::vector<std::string>> classify(const ImageRef& image, int k) override;

 private:
  std::shared_ptr<ImageStore> store_;
  MockOptions opts_;
};

class MockImageGenerator final : public ImageGenerator {
 public:
  explicit MockImageGenerator(std::shared_ptr<ImageStore> store, MockOptions opts = {});
  Reply<ImageRef> generate(const std::string& prompt, std::uint64_t seed) override;

 private:
  std::shared_ptr<ImageStore> store_;
  MockOptions opts_;
};

// Words embedded in a mock image, or nullopt for other bytes.
std::optional<std::vector<std::string>> mock_image_tokens(std::string_view bytes);

ModelStack make_mock_stack(std::shared_ptr<ImageStore> store = std::make_shared<ImageStore>(),
                           MockOptions opts = {});
// Backends without an endpoint are allowed here and fail with a config error
// on first use; callers validate the ones a path needs up front.
ModelStack make_http_stack(const BackendsConfig& cfg, std::shared_ptr<ImageStore> store,
                           std::filesystem::path image_root = {});

}  // namespace tagsynth
