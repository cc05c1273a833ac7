#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagsynth/filter.hpp"
#include "tagsynth/manifest.hpp"

namespace tagsynth {

inline constexpr size_t kWordBinWidth = 5;
inline constexpr size_t kWordBins = 30;  // 0-4 ... 145-149, then one overflow bin

// Whitespace-separated words.
size_t word_count(std::string_view text);

struct ManifestStats {
  std::string name;
  size_t count = 0;       // records
  size_t text_count = 0;  // records with text
  double mean_words = 0.0;
  double median_words = 0.0;
  std::array<size_t, kWordBins + 1> word_histogram{};
  size_t ratio_count = 0;  // records with a filter ratio
  std::array<size_t, kRatioBins> ratio_histogram{};

  nlohmann::ordered_json to_json() const;
};

struct StatsReport {
  std::vector<ManifestStats> manifests;

  nlohmann::ordered_json to_json() const;
  // One row per bin, one column per manifest.
  std::string word_histogram_csv() const;
};

ManifestStats manifest_stats(const Manifest& m, const std::string& name);
StatsReport compute_stats(const std::vector<Manifest>& manifests,
                          const std::vector<std::string>& names = {});

}  // namespace tagsynth
