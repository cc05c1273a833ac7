// Reference implementations used as test oracles. Written from the rule
// statements, sharing no code with the library.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

namespace oracle {

inline std::vector<std::string> tokens(const std::string& text) {
  std::string lower = text;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::regex word("[a-z0-9]+");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(lower.begin(), lower.end(), word); it != std::sregex_iterator();
       ++it)
    out.push_back(it->str());
  return out;
}

inline const std::set<std::string>& stop_words() {
  static const std::set<std::string> s = {
      "a", "an", "the", "and", "or", "of", "in", "on", "at", "to", "for", "with", "by", "from",
      "into", "onto", "over", "under", "near", "behind", "above", "below", "between", "through",
      "across", "along", "around", "about", "against", "among", "beside", "besides", "inside",
      "outside", "upon", "within", "without", "toward", "towards", "beneath", "beyond", "during",
      "like", "past", "via", "per", "atop", "amid"};
  return s;
}

// Two words are the same modulo a trailing "s" (words of 4+ letters) or "es"
// (5+ letters) on either side.
inline bool same_word(const std::string& a, const std::string& b, bool folding) {
  if (a == b) return true;
  if (!folding) return false;
  auto forms = [](const std::string& w) {
    std::set<std::string> f{w};
    if (w.size() >= 4 && w.back() == 's') f.insert(w.substr(0, w.size() - 1));
    if (w.size() >= 5 && w.compare(w.size() - 2, 2, "es") == 0) f.insert(w.substr(0, w.size() - 2));
    return f;
  };
  for (const auto& x : forms(a))
    for (const auto& y : forms(b))
      if (x == y) return true;
  return false;
}

// Brute force: every required word of the tag is compared against every word
// of the text.
inline bool tag_in_text(const std::string& tag, const std::string& text, bool content_only,
                        bool folding) {
  std::vector<std::string> need = tokens(tag);
  if (content_only) {
    std::vector<std::string> content;
    for (const auto& w : need)
      if (!stop_words().count(w)) content.push_back(w);
    if (!content.empty()) need = content;
  }
  if (need.empty()) return false;
  std::vector<std::string> have = tokens(text);
  for (const auto& n : need) {
    bool found = false;
    for (const auto& h : have) found = found || same_word(n, h, folding);
    if (!found) return false;
  }
  return true;
}

inline double ratio(const std::vector<std::string>& tags, const std::string& text, bool content_only,
                    bool folding) {
  size_t hit = 0;
  for (const auto& t : tags) hit += tag_in_text(t, text, content_only, folding);
  return static_cast<double>(hit) / static_cast<double>(tags.size());
}

// ---------------------------------------------------------------------------
// Path rules

inline bool is_data(const std::string& n) { return n[0] == '1'; }

inline bool edge_ok(const std::string& a, const std::string& b) {
  static const std::set<std::pair<std::string, std::string>> edges = {
      {"1a", "2a"}, {"1c", "2a"}, {"2a", "1e"}, {"1e", "3a"}, {"1b", "3a"}, {"1d", "3a"},
      {"3a", "2b"}, {"2b", "1d"}, {"1d", "3b"}, {"1b", "3b"}, {"3b", "2c"}, {"2c", "1c"}};
  return edges.count({a, b}) > 0;
}

// Every rule a node sequence breaks; empty when it is a legal path.
inline std::set<std::string> violated_rules(const std::vector<std::string>& nodes,
                                            bool side_input) {
  std::set<std::string> broken;
  if (nodes.empty()) return {"empty"};
  if (!is_data(nodes.front()) || !is_data(nodes.back())) broken.insert("endpoint-not-data");
  if (nodes.front() == "1e") broken.insert("unsupplied-start");
  int taggers = 0;
  bool model = false;
  bool text_controller = false;
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (i > 0 && !edge_ok(nodes[i - 1], nodes[i])) broken.insert("illegal-edge");
    if (nodes[i] == "2a" && ++taggers > 2) broken.insert("tagger-loop-bound");
    if (nodes[i][0] == '2') model = true;
    if (nodes[i] == "3a") text_controller = true;
  }
  if (!model) broken.insert("no-model");
  if (side_input && !text_controller) broken.insert("side-input-without-controller");
  return broken;
}

inline const std::vector<std::string>& node_names() {
  static const std::vector<std::string> n = {"1a", "1b", "1c", "1d", "1e",
                                             "2a", "2b", "2c", "3a", "3b"};
  return n;
}

// Fuzz input: either any 1-9 node names, or a walk over legal edges from a
// data node that is extended until it ends at a data node.
inline std::vector<std::string> random_sequence(std::mt19937& rng, bool legal_walk) {
  const auto& all = node_names();
  std::vector<std::string> seq;
  size_t len = 1 + rng() % 9;
  if (!legal_walk) {
    while (seq.size() < len) seq.push_back(all[rng() % all.size()]);
    return seq;
  }
  seq.push_back(all[rng() % 5]);
  auto step = [&] {
    std::vector<std::string> next;
    for (const auto& c : all)
      if (edge_ok(seq.back(), c)) next.push_back(c);
    if (next.empty()) return false;
    seq.push_back(next[rng() % next.size()]);
    return true;
  };
  while (seq.size() < len && step()) {
  }
  while (!is_data(seq.back()) && step()) {
  }
  return seq;
}

// ---------------------------------------------------------------------------

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("tagsynth-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
