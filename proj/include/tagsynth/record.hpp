#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tagsynth/image_store.hpp"

namespace tagsynth {

enum class Origin { kReal, kSynthetic };

const char* to_string(Origin o);

struct Provenance {
  std::string parent_id;
  std::string path_name;
  std::vector<std::string> policy_ids;
  std::uint64_t seed = 0;
  std::optional<double> filter_ratio;

  bool operator==(const Provenance&) const = default;
};

// One image-text unit. At least one of image_ref/text is present and
// synthetic records carry provenance.
struct SampleRecord {
  std::string id;
  std::optional<ImageRef> image_ref;
  std::optional<std::string> text;
  std::optional<std::string> class_label;
  Origin origin = Origin::kReal;
  std::optional<Provenance> provenance;

  bool operator==(const SampleRecord&) const = default;
};

// Keys in a fixed order so serialized records are byte-stable.
nlohmann::ordered_json to_json(const SampleRecord& r);

// Throws Error(kManifest) describing the first schema violation.
SampleRecord record_from_json(const nlohmann::json& j);

// Throws Error(kManifest) when the record invariants do not hold.
void validate_record(const SampleRecord& r);

}  // namespace tagsynth
