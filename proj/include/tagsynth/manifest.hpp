#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagsynth/record.hpp"

namespace tagsynth {

// First line of a manifest file:
//   {"kind":"manifest-header","name":...,"variant":...,"config_digest":...,
//    "count":N,"meta":{...}}
struct ManifestHeader {
  std::string name;
  std::string variant;  // "real", "cap", "img", "capimg", "mix", "tail"
  std::string config_digest;
  size_t count = 0;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

struct Manifest {
  ManifestHeader header;
  std::vector<SampleRecord> records;

  size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

inline constexpr std::string_view kManifestHeaderKind = "manifest-header";

// Parses line-delimited JSON. The header line is optional for hand-made
// inputs; when present its count must match. Throws Error(kManifest) listing
// every problem with its line number.
Manifest parse_manifest(std::string_view text, const std::string& source = "<memory>");
Manifest ingest_manifest(const std::filesystem::path& path);

// Header line followed by one compact JSON record per line; count is taken
// from the records.
std::string serialize_manifest(const Manifest& m);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

// Reads just the header of an existing manifest file, if it has one.
std::optional<ManifestHeader> read_manifest_header(const std::filesystem::path& path);

}  // namespace tagsynth
