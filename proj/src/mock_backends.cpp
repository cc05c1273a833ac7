#include <algorithm>
#include <cctype>
#include <thread>

#include "tagsynth/backends.hpp"
#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

constexpr std::string_view kMockImageMagic = "TAGSYNTH-MOCK-IMAGE 1\n";

void simulate_latency(const MockOptions& opts) {
  if (opts.latency.count() > 0) std::this_thread::sleep_for(opts.latency);
}

std::string join(const std::vector<std::string>& words, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

std::vector<std::string> unique_words(std::vector<std::string> words) {
  std::vector<std::string> out;
  for (auto& w : words)
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(std::move(w));
  return out;
}

// Last run of decimal digits in `ref`, as written ("007").
std::string trailing_digits(std::string_view ref) {
  size_t end = ref.find_last_of("0123456789");
  if (end == std::string_view::npos) return {};
  size_t begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(ref[begin - 1]))) --begin;
  return std::string(ref.substr(begin, end - begin + 1));
}

std::string ref_key(std::string_view ref) {
  std::string digits = trailing_digits(ref);
  if (!digits.empty()) return digits;
  return join(tokenize(ref), "");
}

std::optional<std::vector<std::string>> stored_tokens(const ImageStore* store,
                                                      const ImageRef& image) {
  if (!store || !ImageStore::is_store_ref(image)) return std::nullopt;
  auto bytes = store->get(image);
  if (!bytes) return std::nullopt;
  return mock_image_tokens(*bytes);
}

}  // namespace

std::optional<std::vector<std::string>> mock_image_tokens(std::string_view bytes) {
  if (!bytes.starts_with(kMockImageMagic)) return std::nullopt;
  size_t at = bytes.find("\ntokens ");
  if (at == std::string_view::npos) return std::vector<std::string>{};
  at += 8;
  size_t end = bytes.find('\n', at);
  std::string_view line = bytes.substr(at, end == std::string_view::npos ? end : end - at);
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < line.size()) {
    size_t sp = line.find(' ', pos);
    if (sp == std::string_view::npos) sp = line.size();
    if (sp > pos) out.emplace_back(line.substr(pos, sp - pos));
    pos = sp + 1;
  }
  return out;
}

MockCaptioner::MockCaptioner(std::shared_ptr<ImageStore> store, MockOptions opts)
    : store_(std::move(store)), opts_(opts) {}

Reply<std::string> MockCaptioner::caption(const ImageRef& image) {
  simulate_latency(opts_);
  std::string head = "mock caption for " + image.value;
  if (auto tokens = stored_tokens(store_.get(), image)) {
    if (tokens->empty()) return {head};
    return {head + " with objects " + join(*tokens, " ")};
  }
  std::string key = ref_key(image.value);
  if (std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c) != 0; }) && !key.empty()) {
    key.erase(0, std::min(key.find_first_not_of('0'), key.size() - 1));
  }
  return {head + " with objects obj" + key + "a obj" + key + "b"};
}

MockChatModel::MockChatModel(MockOptions opts) : opts_(opts) {}

Reply<std::string> MockChatModel::complete(const std::string& prompt) {
  simulate_latency(opts_);
  std::string_view extraction_head = kExtractionPrompt.substr(0, kExtractionPrompt.find('\n'));
  if (std::string_view(prompt).starts_with(extraction_head)) {
    size_t at = prompt.rfind("\ncaption: ");
    std::string caption = at == std::string::npos ? std::string() : prompt.substr(at + 10);
    if (size_t cut = caption.find("\n\n"); cut != std::string::npos) caption.resize(cut);
    std::vector<std::string> objects;
    if (size_t w = caption.find(" with objects "); w != std::string::npos)
      objects = unique_words(tokenize(caption.substr(w + 14)));
    else
      objects = unique_words(content_words(caption));
    return {"attributes: \nobjects: " + join(objects, ", ") + "\nrelations: "};
  }

  std::string h = sha256_hex(prompt);
  double keep_rate = 0.1 + 0.8 * (static_cast<double>(std::stoul(h.substr(0, 8), nullptr, 16)) /
                                  4294967296.0);
  std::vector<std::string> kept;
  auto words = tokenize(prompt);
  for (size_t i = 0; i < words.size(); ++i) {
    double u = static_cast<double>(digest64({h, std::to_string(i)}) >> 11) * 0x1.0p-53;
    if (u < keep_rate) kept.push_back(words[i]);
  }
  std::string reply = "SYN[" + h.substr(0, 16) + "]";
  if (!kept.empty()) reply += " " + join(kept, " ");
  return {reply};
}

MockLabelClassifier::MockLabelClassifier(std::shared_ptr<ImageStore> store, MockOptions opts)
    : store_(std::move(store)), opts_(opts) {}

Reply<std::vector<std::string>> MockLabelClassifier::classify(const ImageRef& image, int k) {
  simulate_latency(opts_);
  std::vector<std::string> labels;
  if (auto tokens = stored_tokens(store_.get(), image)) {
    for (auto& t : *tokens) {
      if (labels.size() == static_cast<size_t>(k)) break;
      labels.push_back(t);
    }
    return {labels};
  }
  std::string key = ref_key(image.value);
  for (int i = 0; i < k; ++i) labels.push_back("label_" + key + "_" + std::to_string(i));
  return {labels};
}

MockImageGenerator::MockImageGenerator(std::shared_ptr<ImageStore> store, MockOptions opts)
    : store_(std::move(store)), opts_(opts) {}

Reply<ImageRef> MockImageGenerator::generate(const std::string& prompt, std::uint64_t seed) {
  simulate_latency(opts_);
  std::string bytes(kMockImageMagic);
  bytes += "seed " + std::to_string(seed) + "\n";
  bytes += "prompt-sha256 " + sha256_hex(prompt) + "\n";
  bytes += "tokens " + join(unique_words(content_words(prompt)), " ") + "\n";
  nlohmann::json meta = {{"prompt", prompt}, {"seed", seed}, {"source", "mock"}};
  return {store_->put(bytes, meta)};
}

ModelStack make_mock_stack(std::shared_ptr<ImageStore> store, MockOptions opts) {
  ModelStack stack;
  stack.store = store;
  stack.captioner = std::make_shared<MockCaptioner>(store, opts);
  auto chat = std::make_shared<MockChatModel>(opts);
  stack.extractor = chat;
  stack.llm = chat;
  stack.classifier = std::make_shared<MockLabelClassifier>(store, opts);
  stack.t2i = std::make_shared<MockImageGenerator>(store, opts);
  return stack;
}

}  // namespace tagsynth
