#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagsynth/backends.hpp"
#include "tagsynth/manifest.hpp"
#include "tagsynth/policy.hpp"

namespace tagsynth {

inline constexpr size_t kDefaultTailThreshold = 20;
inline constexpr size_t kDefaultPerClass = 7;

struct TailOptions {
  size_t tail_threshold = kDefaultTailThreshold;  // classes with fewer images are tail
  size_t per_class = kDefaultPerClass;
  ImagePolicy image_policy;  // style defaults to real
  std::uint64_t seed = 0;
  // Full class list; entries absent from the manifest are reported and skipped.
  std::vector<std::string> all_classes;
};

struct TailResult {
  Manifest output;
  std::vector<std::string> tail_classes;  // sorted
  std::vector<std::string> warnings;
};

// Generates per_class synthetic images for each tail class. Records are
// "<class>#tail<j>", parented to the first record of that class.
TailResult augment_tail_classes(const Manifest& manifest, const TailOptions& opts,
                                ModelStack& models);

}  // namespace tagsynth
