#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "tagsynth/manifest.hpp"

namespace tagsynth {

enum class MixRule { kRatio, kPaperMix };

const char* to_string(MixRule r);  // "ratio", "paper_mix"
MixRule parse_mix_rule(std::string_view s);

struct MixConfig {
  double p_r = 0.5;  // probability of drawing an original record
  std::uint64_t seed = 0;
  MixRule rule = MixRule::kRatio;

  void validate() const;
};

// ratio: `total` draws with replacement, each original with probability p_r,
// otherwise from the synthetic manifests in round-robin order. Emitted ids are
// "<source id>@<draw index>".
// paper_mix: for every parent id present in both the cap and the capimg
// manifest, emits the cap record followed by the capimg record. `total` is
// ignored.
Manifest mix_manifests(const Manifest& original, const std::vector<Manifest>& synthetic,
                       const MixConfig& cfg, size_t total);

// Epochs over the mixed set that match the sample count of E epochs over the
// original set: E*N/(N+N').
double epoch_budget(std::uint64_t original_count, std::uint64_t synthetic_count, double epochs);

struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  bool operator==(const Fraction&) const = default;
};

// Exact reduced form for integer epochs.
Fraction epoch_budget_exact(std::uint64_t original_count, std::uint64_t synthetic_count,
                            std::uint64_t epochs);

}  // namespace tagsynth
