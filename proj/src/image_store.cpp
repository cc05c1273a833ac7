#include "tagsynth/image_store.hpp"

#include <fstream>
#include <sstream>

#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/fs_util.hpp"

namespace tagsynth {

ImageStore::ImageStore(std::filesystem::path root) : root_(std::move(root)) {}

bool ImageStore::is_store_ref(const ImageRef& ref) { return ref.value.starts_with(kRefPrefix); }

std::string ImageStore::digest_of(const ImageRef& ref) {
  return ref.value.substr(kRefPrefix.size());
}

std::filesystem::path ImageStore::image_path(const std::string& digest) const {
  return root_ / digest.substr(0, 2) / (digest + ".img");
}

ImageRef ImageStore::put(std::string_view bytes, const nlohmann::json& metadata) {
  std::string digest = sha256_hex(bytes);
  ImageRef ref{std::string(kRefPrefix) + digest};
  std::lock_guard<std::mutex> lock(mu_);
  if (root_.empty()) {
    memory_.try_emplace(digest, std::string(bytes), metadata);
    return ref;
  }
  auto img = image_path(digest);
  if (std::filesystem::exists(img)) return ref;
  std::filesystem::create_directories(img.parent_path());
  nlohmann::json meta = metadata;
  meta["digest"] = digest;
  meta["bytes"] = bytes.size();
  auto sidecar = img;
  sidecar.replace_extension(".json");
  write_file_atomic(sidecar, meta.dump(2) + "\n");
  write_file_atomic(img, bytes);
  return ref;
}

std::optional<std::string> ImageStore::get(const ImageRef& ref) const {
  if (!is_store_ref(ref)) return std::nullopt;
  std::string digest = digest_of(ref);
  if (digest.size() < 2) return std::nullopt;
  std::lock_guard<std::mutex> lock(mu_);
  if (root_.empty()) {
    auto it = memory_.find(digest);
    if (it == memory_.end()) return std::nullopt;
    return it->second.first;
  }
  return read_file(image_path(digest));
}

std::optional<nlohmann::json> ImageStore::metadata(const ImageRef& ref) const {
  if (!is_store_ref(ref)) return std::nullopt;
  std::string digest = digest_of(ref);
  if (digest.size() < 2) return std::nullopt;
  std::lock_guard<std::mutex> lock(mu_);
  if (root_.empty()) {
    auto it = memory_.find(digest);
    if (it == memory_.end()) return std::nullopt;
    return it->second.second;
  }
  auto sidecar = image_path(digest);
  sidecar.replace_extension(".json");
  auto text = read_file(sidecar);
  if (!text) return std::nullopt;
  return nlohmann::json::parse(*text, nullptr, false);
}

std::optional<std::string> load_image_bytes(const ImageRef& ref, const ImageStore* store,
                                            const std::filesystem::path& image_root) {
  if (ImageStore::is_store_ref(ref)) return store ? store->get(ref) : std::nullopt;
  std::filesystem::path p(ref.value);
  if (p.is_relative() && !image_root.empty()) p = image_root / p;
  return read_file(p);
}

}  // namespace tagsynth
