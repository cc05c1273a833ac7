#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagsynth/backends.hpp"
#include "tagsynth/record.hpp"
#include "tagsynth/tagspace.hpp"

namespace tagsynth {

// Default threshold for self-filtering.
inline constexpr double kDefaultFilterThreshold = 0.2;

struct FilterConfig {
  double p_f = kDefaultFilterThreshold;
  TagMatchConfig match;
  bool check_text = true;   // tags of the source vs. the synthetic text
  bool check_image = true;  // re-tagged synthetic image vs. its starting text

  void validate() const;
};

FilterConfig filter_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const FilterConfig& c);

enum class DecisionKind { kPass, kReject, kError };

const char* to_string(DecisionKind k);

struct Decision {
  DecisionKind kind = DecisionKind::kReject;
  std::optional<double> ratio;  // absent for errors and tag-less rejections
  std::string reason;           // empty on pass

  bool passed() const { return kind == DecisionKind::kPass; }
  bool operator==(const Decision&) const = default;
};

// Passes iff the tag presence ratio is at least p_f. An empty tag set is
// rejected with reason "no tags".
Decision filter_text_sample(const VisualTags& tags, std::string_view synthetic_text,
                            const FilterConfig& cfg);

// Re-tags `synthetic_image` with the full tagger and checks the tags against
// the text that produced it. Tagger failures give kError.
Decision filter_image_sample(std::string_view starting_text, const ImageRef& synthetic_image,
                             const FilterConfig& cfg, ModelStack& models);

// What a record needs for each check. Missing inputs make that check
// unrunnable; a candidate with no runnable requested check is quarantined.
struct FilterCandidate {
  SampleRecord record;
  std::optional<VisualTags> tags;
  std::optional<std::string> synthetic_text;
  std::optional<ImageRef> synthetic_image;
  std::optional<std::string> starting_text;
};

// Runs every requested, runnable check; passes only if all of them pass.
// The reported ratio is the smallest ratio among the checks that ran.
Decision evaluate_candidate(const FilterCandidate& c, const FilterConfig& cfg,
                            ModelStack* models);

inline constexpr size_t kRatioBins = 10;

// Bin of `ratio` in a 10-bin histogram over [0, 1]; 1.0 falls in the last bin.
size_t ratio_bin(double ratio);

struct SampleOutcome {
  std::string id;
  Decision decision;
};

struct FilterReport {
  FilterConfig config;
  size_t evaluated = 0;
  size_t passed = 0;
  size_t rejected = 0;
  size_t quarantined = 0;
  std::vector<SampleOutcome> samples;
  std::array<size_t, kRatioBins> ratio_histogram{};
  std::map<std::string, size_t> reasons;

  void add(SampleOutcome outcome);
  double pass_rate() const { return evaluated ? static_cast<double>(passed) / evaluated : 0.0; }

  nlohmann::ordered_json to_json() const;
  // bin_lo,bin_hi,count rows for plotting.
  std::string histogram_csv() const;
};

struct FilterBatchResult {
  std::vector<SampleRecord> passed;  // input order, filter_ratio stamped
  FilterReport report;
};

FilterBatchResult filter_batch(const std::vector<FilterCandidate>& candidates,
                               const FilterConfig& cfg, ModelStack* models,
                               size_t concurrency = 4);

}  // namespace tagsynth
