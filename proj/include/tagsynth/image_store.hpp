#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace tagsynth {

// Reference to an image: a caller-supplied id or path for real images, or
// "store:<sha256>" for images held by an ImageStore.
struct ImageRef {
  std::string value;

  bool operator==(const ImageRef&) const = default;
  bool empty() const { return value.empty(); }
};

// Content-addressed image store. On disk the layout is
//   <root>/<first 2 hex>/<digest>.img
//   <root>/<first 2 hex>/<digest>.json   (sidecar metadata)
// With an empty root everything stays in memory. Safe for concurrent use.
class ImageStore {
 public:
  static constexpr std::string_view kRefPrefix = "store:";

  explicit ImageStore(std::filesystem::path root = {});

  // Stores `bytes` (first writer wins for identical content) and returns
  // its reference.
  ImageRef put(std::string_view bytes, const nlohmann::json& metadata);

  std::optional<std::string> get(const ImageRef& ref) const;
  std::optional<nlohmann::json> metadata(const ImageRef& ref) const;

  static bool is_store_ref(const ImageRef& ref);
  static std::string digest_of(const ImageRef& ref);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path image_path(const std::string& digest) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, std::pair<std::string, nlohmann::json>> memory_;
};

// Bytes of `ref`: store images through `store`, anything else read as a
// file path relative to `image_root`. nullopt when unreadable.
std::optional<std::string> load_image_bytes(const ImageRef& ref, const ImageStore* store,
                                            const std::filesystem::path& image_root);

}  // namespace tagsynth
