#include "tagsynth/stats.hpp"

#include <algorithm>
#include <cctype>

namespace tagsynth {

size_t word_count(std::string_view text) {
  size_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

ManifestStats manifest_stats(const Manifest& m, const std::string& name) {
  ManifestStats s;
  s.name = name;
  s.count = m.records.size();
  std::vector<size_t> words;
  for (const auto& r : m.records) {
    if (r.text) {
      size_t w = word_count(*r.text);
      words.push_back(w);
      ++s.word_histogram[std::min(w / kWordBinWidth, kWordBins)];
    }
    if (r.provenance && r.provenance->filter_ratio) {
      ++s.ratio_count;
      ++s.ratio_histogram[ratio_bin(*r.provenance->filter_ratio)];
    }
  }
  s.text_count = words.size();
  if (!words.empty()) {
    double sum = 0;
    for (size_t w : words) sum += static_cast<double>(w);
    s.mean_words = sum / static_cast<double>(words.size());
    std::sort(words.begin(), words.end());
    size_t mid = words.size() / 2;
    s.median_words = words.size() % 2 ? static_cast<double>(words[mid])
                                      : (static_cast<double>(words[mid - 1]) + words[mid]) / 2.0;
  }
  return s;
}

StatsReport compute_stats(const std::vector<Manifest>& manifests,
                          const std::vector<std::string>& names) {
  StatsReport report;
  for (size_t i = 0; i < manifests.size(); ++i) {
    std::string name = i < names.size() ? names[i]
                       : !manifests[i].header.name.empty() ? manifests[i].header.name
                                                           : "manifest-" + std::to_string(i);
    report.manifests.push_back(manifest_stats(manifests[i], name));
  }
  return report;
}

nlohmann::ordered_json ManifestStats::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["count"] = count;
  j["text_count"] = text_count;
  j["mean_words"] = mean_words;
  j["median_words"] = median_words;
  j["word_bin_width"] = kWordBinWidth;
  j["word_histogram"] = word_histogram;
  j["ratio_count"] = ratio_count;
  j["ratio_histogram"] = ratio_histogram;
  return j;
}

nlohmann::ordered_json StatsReport::to_json() const {
  nlohmann::ordered_json j;
  j["manifests"] = nlohmann::ordered_json::array();
  for (const auto& m : manifests) j["manifests"].push_back(m.to_json());
  return j;
}

std::string StatsReport::word_histogram_csv() const {
  std::string out = "bin_start,bin_end";
  for (const auto& m : manifests) out += "," + m.name;
  out += "\n";
  for (size_t b = 0; b <= kWordBins; ++b) {
    out += std::to_string(b * kWordBinWidth) + ",";
    out += b < kWordBins ? std::to_string((b + 1) * kWordBinWidth - 1) : std::string("inf");
    for (const auto& m : manifests) out += "," + std::to_string(m.word_histogram[b]);
    out += "\n";
  }
  return out;
}

}  // namespace tagsynth
