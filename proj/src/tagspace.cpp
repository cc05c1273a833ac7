#include "tagsynth/tagspace.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(unsigned char c) {
  return c < 0x80 && c > 0x20 && c != 0x7f && !std::isalnum(c);
}

bool is_word_char(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

char lower(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

void push_unique(std::vector<std::string>& list, std::string tag) {
  if (tag.empty()) return;
  if (std::find(list.begin(), list.end(), tag) == list.end()) list.push_back(std::move(tag));
}

std::vector<std::string> normalized_unique(std::vector<std::string> raw) {
  std::vector<std::string> out;
  out.reserve(raw.size());
  for (auto& tag : raw) push_unique(out, normalize_tag(tag));
  return out;
}

// Every plural variant of every text token, for constant-time lookups.
class TokenIndex {
 public:
  TokenIndex(std::span<const std::string> tokens, bool plural_folding)
      : folding_(plural_folding) {
    for (const auto& t : tokens) {
      if (folding_) {
        for (auto& v : plural_variants(t)) forms_.insert(std::move(v));
      } else {
        forms_.insert(t);
      }
    }
  }

  bool contains(const std::string& token) const {
    if (!folding_) return forms_.count(token) > 0;
    for (const auto& v : plural_variants(token))
      if (forms_.count(v)) return true;
    return false;
  }

 private:
  bool folding_;
  std::unordered_set<std::string> forms_;
};

bool tag_present_in(std::string_view tag, const TokenIndex& index, const TagMatchConfig& cfg) {
  std::vector<std::string> needed =
      cfg.mode == MatchMode::kExactToken ? tokenize(tag) : content_words(tag);
  if (needed.empty()) return false;
  return std::all_of(needed.begin(), needed.end(),
                     [&](const std::string& t) { return index.contains(t); });
}

}  // namespace

std::string normalize_tag(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower(c));
  }
  // Stripping punctuation can expose a space ("a. !" -> "a."), so repeat.
  while (!out.empty() && (is_punct(out.back()) || is_space(out.back()))) out.pop_back();
  return out;
}

const char* to_string(TagCategory category) {
  switch (category) {
    case TagCategory::kObjects: return "objects";
    case TagCategory::kAttributes: return "attributes";
    case TagCategory::kRelations: return "relations";
  }
  return "objects";
}

TagCategory parse_tag_category(std::string_view name) {
  if (name == "objects") return TagCategory::kObjects;
  if (name == "attributes") return TagCategory::kAttributes;
  if (name == "relations") return TagCategory::kRelations;
  throw Error(ErrorCode::kConfig, "unknown tag category '" + std::string(name) + "'");
}

VisualTags::VisualTags(std::vector<std::string> objects, std::vector<std::string> attributes,
                       std::vector<std::string> relations)
    : lists_{normalized_unique(std::move(objects)), normalized_unique(std::move(attributes)),
             normalized_unique(std::move(relations))} {}

const std::vector<std::string>& VisualTags::list(TagCategory category) const {
  return lists_[static_cast<size_t>(category)];
}

size_t VisualTags::size() const {
  return lists_[0].size() + lists_[1].size() + lists_[2].size();
}

std::vector<std::string> VisualTags::all() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& l : lists_) out.insert(out.end(), l.begin(), l.end());
  return out;
}

VisualTags merge_tag_sets(const VisualTags& extracted,
                          std::span<const std::string> classifier_labels) {
  std::vector<std::string> objects = extracted.objects();
  if (objects.size() > kMaxMergedObjects) objects.resize(kMaxMergedObjects);
  for (const auto& label : classifier_labels) {
    if (objects.size() >= kMaxMergedObjects) break;
    push_unique(objects, normalize_tag(label));
  }
  return VisualTags(std::move(objects), extracted.attributes(), extracted.relations());
}

const char* to_string(MatchMode mode) {
  return mode == MatchMode::kExactToken ? "exact-token" : "all-content-words";
}

MatchMode parse_match_mode(std::string_view name) {
  if (name == "exact-token") return MatchMode::kExactToken;
  if (name == "all-content-words") return MatchMode::kAllContentWords;
  throw Error(ErrorCode::kConfig, "unknown match mode '" + std::string(name) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      cur.push_back(lower(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

bool is_stop_word(std::string_view token) {
  static const std::unordered_set<std::string_view> kStopWords = {
      "a",      "an",      "the",     "and",    "or",     "of",      "in",     "on",
      "at",     "to",      "for",     "with",   "by",     "from",    "into",   "onto",
      "over",   "under",   "near",    "behind", "above",  "below",   "between", "through",
      "across", "along",   "around",  "about",  "against", "among",  "beside", "besides",
      "inside", "outside", "upon",    "within", "without", "toward", "towards", "beneath",
      "beyond", "during",  "like",    "past",   "via",    "per",     "atop",   "amid"};
  return kStopWords.count(token) > 0;
}

std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> tokens = tokenize(text);
  std::vector<std::string> content;
  for (const auto& t : tokens)
    if (!is_stop_word(t)) content.push_back(t);
  return content.empty() ? tokens : content;
}

std::vector<std::string> plural_variants(std::string_view token) {
  std::vector<std::string> out{std::string(token)};
  if (token.size() >= 4 && token.back() == 's') out.emplace_back(token.substr(0, token.size() - 1));
  if (token.size() >= 5 && token.ends_with("es"))
    out.emplace_back(token.substr(0, token.size() - 2));
  return out;
}

bool tag_present(std::string_view tag, std::span<const std::string> text_tokens,
                 const TagMatchConfig& cfg) {
  return tag_present_in(tag, TokenIndex(text_tokens, cfg.plural_folding), cfg);
}

double tag_presence_ratio(const VisualTags& tags, std::string_view text,
                          const TagMatchConfig& cfg) {
  if (tags.empty()) throw Error(ErrorCode::kPrecondition, "no tags to match");
  std::vector<std::string> tokens = tokenize(text);
  TokenIndex index(tokens, cfg.plural_folding);
  size_t present = 0;
  for (auto category : {TagCategory::kObjects, TagCategory::kAttributes, TagCategory::kRelations})
    for (const auto& tag : tags.list(category))
      if (tag_present_in(tag, index, cfg)) ++present;
  return static_cast<double>(present) / static_cast<double>(tags.size());
}

}  // namespace tagsynth
