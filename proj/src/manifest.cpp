#include "tagsynth/manifest.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "tagsynth/error.hpp"
#include "tagsynth/fs_util.hpp"

namespace tagsynth {

namespace {

constexpr size_t kMaxReportedProblems = 20;

bool is_header(const nlohmann::json& j) {
  return j.is_object() && j.value("kind", std::string()) == kManifestHeaderKind;
}

ManifestHeader header_from_json(const nlohmann::json& j) {
  ManifestHeader h;
  h.name = j.value("name", std::string());
  h.variant = j.value("variant", std::string());
  h.config_digest = j.value("config_digest", std::string());
  h.count = j.value("count", size_t{0});
  if (j.contains("meta")) h.meta = nlohmann::ordered_json::parse(j["meta"].dump());
  return h;
}

}  // namespace

Manifest parse_manifest(std::string_view text, const std::string& source) {
  Manifest m;
  std::vector<std::string> problems;
  std::map<std::string, size_t> first_line;
  bool header_seen = false;
  bool header_has_count = false;

  size_t lineno = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      problems.push_back("line " + std::to_string(lineno) + ": malformed JSON");
      continue;
    }
    if (is_header(j)) {
      if (header_seen || !m.records.empty()) {
        problems.push_back("line " + std::to_string(lineno) + ": header must be the first line");
        continue;
      }
      header_seen = true;
      header_has_count = j.contains("count");
      m.header = header_from_json(j);
      continue;
    }
    try {
      SampleRecord r = record_from_json(j);
      auto [it, inserted] = first_line.emplace(r.id, lineno);
      if (!inserted) {
        problems.push_back("duplicate id '" + r.id + "' on lines " + std::to_string(it->second) +
                           "," + std::to_string(lineno));
        continue;
      }
      m.records.push_back(std::move(r));
    } catch (const Error& e) {
      problems.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  if (header_seen && header_has_count && m.header.count != m.records.size() && problems.empty())
    problems.push_back("header count " + std::to_string(m.header.count) + " but " +
                       std::to_string(m.records.size()) + " records");
  if (!problems.empty()) {
    std::string msg = source + ": " + std::to_string(problems.size()) + " problem(s)";
    for (size_t i = 0; i < problems.size() && i < kMaxReportedProblems; ++i)
      msg += "\n  " + problems[i];
    throw Error(ErrorCode::kManifest, msg);
  }
  m.header.count = m.records.size();
  return m;
}

Manifest ingest_manifest(const std::filesystem::path& path) {
  auto text = read_file(path);
  if (!text) throw Error(ErrorCode::kIo, "cannot read manifest " + path.string());
  Manifest m = parse_manifest(*text, path.string());
  if (m.header.name.empty()) m.header.name = path.stem().string();
  return m;
}

std::string serialize_manifest(const Manifest& m) {
  nlohmann::ordered_json h;
  h["kind"] = kManifestHeaderKind;
  h["name"] = m.header.name;
  h["variant"] = m.header.variant;
  h["config_digest"] = m.header.config_digest;
  h["count"] = m.records.size();
  h["meta"] = m.header.meta;
  std::string out = h.dump() + "\n";
  for (const auto& r : m.records) out += to_json(r).dump() + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, serialize_manifest(m));
}

std::optional<ManifestHeader> read_manifest_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) return std::nullopt;
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !is_header(j)) return std::nullopt;
  return header_from_json(j);
}

}  // namespace tagsynth
