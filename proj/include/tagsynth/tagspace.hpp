#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tagsynth {

// Lowercases ASCII, trims, collapses internal whitespace and strips trailing
// punctuation. Returns "" when nothing remains. Idempotent.
std::string normalize_tag(std::string_view raw);

enum class TagCategory { kObjects, kAttributes, kRelations };

const char* to_string(TagCategory category);
TagCategory parse_tag_category(std::string_view name);

// Decomposed visual semantics of one image. Tags are stored normalized and
// unique within each list; tags that normalize to "" are dropped on
// construction.
class VisualTags {
 public:
  VisualTags() = default;
  VisualTags(std::vector<std::string> objects, std::vector<std::string> attributes,
             std::vector<std::string> relations);

  const std::vector<std::string>& objects() const { return lists_[0]; }
  const std::vector<std::string>& attributes() const { return lists_[1]; }
  const std::vector<std::string>& relations() const { return lists_[2]; }
  const std::vector<std::string>& list(TagCategory category) const;

  // Total number of tags across the three lists.
  size_t size() const;
  bool empty() const { return size() == 0; }

  // Objects, then attributes, then relations.
  std::vector<std::string> all() const;

  bool operator==(const VisualTags&) const = default;

 private:
  std::array<std::vector<std::string>, 3> lists_;
};

// Upper bound on the merged objects list.
inline constexpr size_t kMaxMergedObjects = 48;

// Unions classifier labels into `objects`. Extracted tags keep priority when
// the kMaxMergedObjects cap is reached.
VisualTags merge_tag_sets(const VisualTags& extracted,
                          std::span<const std::string> classifier_labels);

enum class MatchMode { kExactToken, kAllContentWords };

const char* to_string(MatchMode mode);
MatchMode parse_match_mode(std::string_view name);

struct TagMatchConfig {
  MatchMode mode = MatchMode::kAllContentWords;
  bool plural_folding = true;

  bool operator==(const TagMatchConfig&) const = default;
};

// Lowercased maximal runs of alphanumeric characters. Bytes >= 0x80 count as
// word characters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

// Articles, prepositions and conjunctions skipped in content-word matching.
bool is_stop_word(std::string_view token);

// Tokens of `text` that are not stop words; all tokens if every token is one.
std::vector<std::string> content_words(std::string_view text);

// The token forms compared under plural folding: the token itself plus the
// token with a trailing "s" or "es" removed.
std::vector<std::string> plural_variants(std::string_view token);

// Whether one tag counts as present in the tokens of a text.
bool tag_present(std::string_view tag, std::span<const std::string> text_tokens,
                 const TagMatchConfig& cfg);

// Fraction of tags (all three lists counted uniformly) present in `text`.
// Throws Error(kPrecondition, "no tags to match") for an empty tag set.
double tag_presence_ratio(const VisualTags& tags, std::string_view text,
                          const TagMatchConfig& cfg);

}  // namespace tagsynth
