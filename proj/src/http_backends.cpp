#include <httplib.h>

#include <cmath>
#include <thread>

#include "tagsynth/backends.hpp"
#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

struct SlotGuard {
  explicit SlotGuard(std::counting_semaphore<1 << 20>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
  std::counting_semaphore<1 << 20>& sem;
};

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

void attach_image(nlohmann::json& body, const ImageRef& image, const ImageStore* store,
                  const std::filesystem::path& image_root) {
  body["image_ref"] = image.value;
  if (auto bytes = load_image_bytes(image, store, image_root))
    body["image_b64"] = base64_encode(*bytes);
}

}  // namespace

HttpJsonClient::HttpJsonClient(BackendConfig cfg, std::string stage)
    : cfg_(std::move(cfg)), stage_(std::move(stage)), slots_(cfg_.max_in_flight) {
  cfg_.validate(stage_);
  size_t scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorCode::kConfig, "backend " + stage_ + ": endpoint '" + cfg_.endpoint +
                                        "' is not an http(s) URL");
  size_t path_start = cfg_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = cfg_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
}

Reply<nlohmann::json> HttpJsonClient::post(const nlohmann::json& body) {
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (auto token = cfg_.resolved_token()) headers.emplace("Authorization", "Bearer " + *token);

  auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      double wait = cfg_.retry.backoff_base_s * std::pow(2.0, attempt - 2);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    httplib::Result res;
    {
      SlotGuard slot(slots_);
      httplib::Client client(scheme_host_port_);
      client.set_connection_timeout(timeout_us);
      client.set_read_timeout(timeout_us);
      client.set_write_timeout(timeout_us);
      res = client.Post(path_, headers, payload, "application/json");
    }
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded())
        throw Error(ErrorCode::kDegenerate, "malformed JSON response", stage_)
            .set_attempts(attempt);
      return {std::move(parsed), attempt};
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable_status(res->status))
      throw Error(ErrorCode::kTransport, last_error + " from " + cfg_.endpoint, stage_)
          .set_attempts(attempt);
  }
  throw Error(ErrorCode::kTransport,
              last_error + " after " + std::to_string(cfg_.retry.max_attempts) + " attempts",
              stage_)
      .set_attempts(cfg_.retry.max_attempts);
}

HttpCaptioner::HttpCaptioner(BackendConfig cfg, std::shared_ptr<ImageStore> store,
                             std::filesystem::path image_root)
    : client_(std::move(cfg), "captioner"),
      store_(std::move(store)),
      image_root_(std::move(image_root)) {}

Reply<std::string> HttpCaptioner::caption(const ImageRef& image) {
  nlohmann::json body = {{"task", std::string(kDetailedCaptionTask)}};
  attach_image(body, image, store_.get(), image_root_);
  auto reply = client_.post(body);
  if (!reply.value.contains("caption") || !reply.value["caption"].is_string())
    throw Error(ErrorCode::kDegenerate, "response lacks caption", "captioner")
        .set_attempts(reply.attempts);
  return {reply.value["caption"].get<std::string>(), reply.attempts};
}

HttpChatModel::HttpChatModel(BackendConfig cfg, std::string stage)
    : client_(std::move(cfg), std::move(stage)) {}

nlohmann::json HttpChatModel::request_body(const std::string& prompt) const {
  const auto& cfg = client_.config();
  nlohmann::json body = {
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
      {"max_tokens", cfg.max_tokens},
      {"stream", false},
  };
  if (!cfg.model.empty()) body["model"] = cfg.model;
  // Greedy decoding in the chat-completion dialect is temperature 0.
  body["temperature"] = cfg.decoding == Decoding::kGreedy ? 0.0 : cfg.temperature;
  return body;
}

Reply<std::string> HttpChatModel::complete(const std::string& prompt) {
  auto reply = client_.post(request_body(prompt));
  const auto& j = reply.value;
  try {
    return {j.at("choices").at(0).at("message").at("content").get<std::string>(),
            reply.attempts};
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kDegenerate, "response lacks choices[0].message.content")
        .set_attempts(reply.attempts);
  }
}

HttpLabelClassifier::HttpLabelClassifier(BackendConfig cfg, std::shared_ptr<ImageStore> store,
                                         std::filesystem::path image_root)
    : client_(std::move(cfg), "classifier"),
      store_(std::move(store)),
      image_root_(std::move(image_root)) {}

Reply<std::vector<std::string>> HttpLabelClassifier::classify(const ImageRef& image, int k) {
  nlohmann::json body = {{"top_k", k}};
  attach_image(body, image, store_.get(), image_root_);
  auto reply = client_.post(body);
  std::vector<std::string> labels;
  try {
    for (const auto& l : reply.value.at("labels")) {
      labels.push_back(l.is_string() ? l.get<std::string>() : l.at("label").get<std::string>());
    }
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kDegenerate, "response lacks labels").set_attempts(reply.attempts);
  }
  return {std::move(labels), reply.attempts};
}

HttpImageGenerator::HttpImageGenerator(BackendConfig cfg, std::shared_ptr<ImageStore> store)
    : client_(std::move(cfg), "t2i"), store_(std::move(store)) {}

nlohmann::json HttpImageGenerator::request_body(const std::string& prompt,
                                                std::uint64_t seed) const {
  const auto& cfg = client_.config();
  nlohmann::json body = {{"prompt", prompt},
                         {"seed", seed},
                         {"guidance_scale", cfg.guidance_scale},
                         {"num_inference_steps", cfg.diffusion_steps}};
  if (!cfg.model.empty()) body["model"] = cfg.model;
  return body;
}

Reply<ImageRef> HttpImageGenerator::generate(const std::string& prompt, std::uint64_t seed) {
  auto reply = client_.post(request_body(prompt, seed));
  std::string bytes;
  try {
    bytes = base64_decode(reply.value.at("image_b64").get<std::string>());
  } catch (const std::exception&) {
    throw Error(ErrorCode::kDegenerate, "response lacks a valid image_b64")
        .set_attempts(reply.attempts);
  }
  if (bytes.empty()) throw Error(ErrorCode::kDegenerate, "degenerate image").set_attempts(reply.attempts);
  nlohmann::json meta = {{"prompt", prompt}, {"seed", seed}, {"source", "http"}};
  return {store_->put(bytes, meta), reply.attempts};
}

namespace {

// Stands in for a backend without an endpoint; fails only if actually used.
class Unconfigured final : public Captioner,
                           public ChatModel,
                           public LabelClassifier,
                           public ImageGenerator {
 public:
  explicit Unconfigured(std::string name) : name_(std::move(name)) {}
  Reply<std::string> caption(const ImageRef&) override { fail(); }
  Reply<std::string> complete(const std::string&) override { fail(); }
  Reply<std::vector<std::string>> classify(const ImageRef&, int) override { fail(); }
  Reply<ImageRef> generate(const std::string&, std::uint64_t) override { fail(); }

 private:
  [[noreturn]] void fail() const {
    throw Error(ErrorCode::kConfig, "backend " + name_ + " has no endpoint configured", name_);
  }
  std::string name_;
};

template <typename Iface, typename Make>
std::shared_ptr<Iface> http_or_unconfigured(const BackendConfig& cfg, const std::string& name,
                                            Make make) {
  if (cfg.endpoint.empty()) return std::make_shared<Unconfigured>(name);
  return make();
}

}  // namespace

ModelStack make_http_stack(const BackendsConfig& cfg, std::shared_ptr<ImageStore> store,
                           std::filesystem::path image_root) {
  ModelStack stack;
  stack.store = store;
  stack.captioner = http_or_unconfigured<Captioner>(cfg.captioner, "captioner", [&] {
    return std::make_shared<HttpCaptioner>(cfg.captioner, store, image_root);
  });
  stack.extractor = http_or_unconfigured<ChatModel>(cfg.extractor, "extractor", [&] {
    return std::make_shared<HttpChatModel>(cfg.extractor, "extractor");
  });
  stack.classifier = http_or_unconfigured<LabelClassifier>(cfg.classifier, "classifier", [&] {
    return std::make_shared<HttpLabelClassifier>(cfg.classifier, store, image_root);
  });
  stack.llm = http_or_unconfigured<ChatModel>(cfg.llm, "llm", [&] {
    return std::make_shared<HttpChatModel>(cfg.llm, "llm");
  });
  stack.t2i = http_or_unconfigured<ImageGenerator>(cfg.t2i, "t2i", [&] {
    return std::make_shared<HttpImageGenerator>(cfg.t2i, store);
  });
  return stack;
}

}  // namespace tagsynth
