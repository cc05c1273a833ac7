#include "tagsynth/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

constexpr std::array<std::string_view, kNumTextTemplates> kTextTemplates = {
    "Create a detailed and high-quality caption using phrases that represent the entities or objects, their unique attributes, and the visual relationships in the scene depicted. Phrases: {phrases}.",
    "Compose a rich and immersive caption by incorporating a set of phrases that illustrate the entities or objects, their defining attributes, and the interconnections presented within the image. Phrases: {phrases}.",
    "Formulate an articulate and informative caption by using a series of phrases that outline the entities, their attributes, and their visual relationships depicted in an image. Phrases: {phrases}.",
    "Using a set of phrases that highlight the entities, attributes, and their visual associations in an image, craft a detailed and expressive caption. Phrases: {phrases}.",
    "Construct a comprehensive and expressive caption by integrating phrases that detail the entities, their features, and the spatial or thematic relationships in an image. Phrases: {phrases}.",
    "Create a comprehensive caption that faithfully represents the objects, attributes, and their relationships contained within the provided sentence and phrases. Given sentence: {caption}. Given phrases: {phrases}. If the original caption specifies particular give phrases, maintain their integrity while using the phrases to enhance the description.",
    "Write a faithful caption by integrating the given phrases with the original sentence. Given sentence: {caption}. Given phrases: {phrases}. Ensure any objects or specific nouns from the original caption are preserved while elaborating on the visual relationships and attributes provided in the phrases to create a more detailed depiction.",
    "Provide a faithful and informative image caption using a given sentence and few phrases. Sentence: {caption}, phrases: {phrases}. Consider the initial sentence as a base for the overall context and ensure that specific objects or nouns such as numbers, car models, animals, etc., are preserved in the new caption. Integrate the given phrases, which describe entities, attributes, or visual relationships, to enrich and elaborate on the original meaning. Maintain fidelity to the original content while enhancing descriptive quality.",
    "Make a detailed caption based on the given phrases and a given sentence. Given phrases: {phrases}. Given sentence: {caption}. The sentence serves as a foundation, while the phrases elaborate on elements depicted in the image, like objects, their characteristics, and interactions. Preserve any pivotal information concerning objects, attributes, and their relations present in the sentence.",
    "Write a new faithful and high-quality caption based on the given phrases and a given sentence. The given sentence is the original caption and the phrases are entities or objects, attributes, and their visual relationships in an image. Given sentence: {caption}. Given phrases: {phrases}. If the sentence contains objects or nouns (e.g. digits, car models, planes, pets, animals, etc.), the new caption should be faithful and keep this information. Otherwise, use the phrases to create the new caption.",
};

constexpr std::array<std::string_view, 5> kImageTemplates = {
    "a real photo. {prompt}. 35mm photograph, film, bokeh, professional, 4k, highly detailed",
    "a real photo showing {prompt}. highly detailed",
    "isometric style {prompt} . vibrant, beautiful, crisp, detailed, ultra detailed, intricate",
    "breathtaking {prompt}. award-winning, professional, highly detailed",
    "masterpiece, best quality, ultra detailed, {prompt}. intricate details",
};

constexpr std::array<std::string_view, 5> kStyleNames = {"real", "nocap", "isometric", "enhance",
                                                         "quality"};

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

bool iequal_at(std::string_view text, size_t pos, std::string_view needle) {
  if (pos + needle.size() > text.size()) return false;
  for (size_t i = 0; i < needle.size(); ++i) {
    unsigned char a = static_cast<unsigned char>(text[pos + i]);
    unsigned char b = static_cast<unsigned char>(needle[i]);
    if (std::tolower(a) != std::tolower(b)) return false;
  }
  return true;
}

std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", w);
  return buf;
}

// Split point between task template and task content: just after the last
// sentence break preceding the first placeholder.
size_t content_split(std::string_view tmpl) {
  size_t first = tmpl.find('{');
  if (first == std::string_view::npos) return tmpl.size();
  size_t brk = tmpl.rfind(". ", first);
  return brk == std::string_view::npos ? 0 : brk + 2;
}

std::vector<std::string> read_json_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open policy file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return {ss.str()};
}

template <typename Policy, typename Parse>
std::vector<Policy> load_policies(const std::string& path, Parse parse) {
  std::string body = read_json_documents(path).front();
  std::vector<Policy> out;
  auto add = [&](const nlohmann::json& j) {
    if (j.is_array()) {
      for (const auto& e : j) out.push_back(parse(e));
    } else {
      out.push_back(parse(j));
    }
  };
  try {
    add(nlohmann::json::parse(body));
    return out;
  } catch (const nlohmann::json::parse_error&) {
    out.clear();
  }
  // JSON lines.
  std::istringstream lines(body);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      add(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig,
                  path + ":" + std::to_string(lineno) + ": invalid policy: " + e.what());
    }
  }
  return out;
}

const char* to_string(EditOp op) {
  switch (op) {
    case EditOp::kRemove: return "remove";
    case EditOp::kAdd: return "add";
    case EditOp::kReplace: return "replace";
  }
  return "remove";
}

EditOp parse_edit_op(const std::string& name) {
  if (name == "remove") return EditOp::kRemove;
  if (name == "add") return EditOp::kAdd;
  if (name == "replace") return EditOp::kReplace;
  throw Error(ErrorCode::kConfig, "unknown tag edit op '" + name + "'");
}

}  // namespace

const std::string_view kSafeDefaultConstraints =
    "The caption should not contain any NSFW words. It should be grammatically correct. It "
    "should be concise, but not too short. Directly output the caption and do not add any "
    "formatting.";

std::string_view builtin_text_template(int template_id) {
  if (template_id < 1 || template_id > kNumTextTemplates)
    throw Error(ErrorCode::kConfig,
                "text template id " + std::to_string(template_id) + " outside 1..10");
  return kTextTemplates[static_cast<size_t>(template_id - 1)];
}

const char* to_string(ImageStyle style) {
  return kStyleNames[static_cast<size_t>(style)].data();
}

ImageStyle parse_image_style(std::string_view name) {
  for (size_t i = 0; i < kStyleNames.size(); ++i)
    if (kStyleNames[i] == name) return static_cast<ImageStyle>(i);
  throw Error(ErrorCode::kConfig, "unknown image style '" + std::string(name) + "'");
}

std::string_view image_style_template(ImageStyle style) {
  return kImageTemplates[static_cast<size_t>(style)];
}

void TemplateRegistry::add_custom(const std::string& name, std::string text) {
  if (name.empty()) throw Error(ErrorCode::kConfig, "custom template needs a name");
  if (text.find("{phrases}") == std::string::npos)
    throw Error(ErrorCode::kConfig, "custom template '" + name + "' lacks {phrases}");
  custom_[name] = std::move(text);
}

const std::string& TemplateRegistry::custom(const std::string& name) const {
  auto it = custom_.find(name);
  if (it == custom_.end()) throw Error(ErrorCode::kConfig, "unknown custom template '" + name + "'");
  return it->second;
}

void TagEdit::validate() const {
  if (normalize_tag(target).empty()) throw Error(ErrorCode::kConfig, "tag edit with empty target");
  if ((op == EditOp::kReplace) != replacement.has_value())
    throw Error(ErrorCode::kConfig, "tag edit on '" + target +
                                        "': replacement must be given exactly for replace");
  if (replacement && normalize_tag(*replacement).empty())
    throw Error(ErrorCode::kConfig, "tag edit on '" + target + "' has empty replacement");
}

void TextPolicy::validate(const TemplateRegistry* registry) const {
  bool needs_caption = false;
  if (!custom_template.empty()) {
    if (!registry || !registry->has_custom(custom_template))
      throw Error(ErrorCode::kConfig, "policy " + id + ": unknown custom template '" +
                                          custom_template + "'");
    needs_caption = registry->custom(custom_template).find("{caption}") != std::string::npos;
  } else {
    builtin_text_template(template_id);
    needs_caption = template_id > 5;
  }
  if (needs_caption != requires_original_text)
    throw Error(ErrorCode::kConfig,
                "policy " + id + ": requires_original_text must be " +
                    (needs_caption ? "true" : "false") + " for its template");
  for (const auto& e : tag_edits) e.validate();
}

TextPolicy make_text_policy(int template_id, std::string id) {
  TextPolicy p;
  p.id = std::move(id);
  p.template_id = template_id;
  p.requires_original_text = template_id > 5;
  return p;
}

void ImagePolicy::validate() const {
  for (const auto& [tag, w] : tag_weights) {
    if (!(w > 0.0 && w <= 2.0))
      throw Error(ErrorCode::kConfig,
                  "policy " + id + ": weight for '" + tag + "' outside (0, 2]");
    if (tag.empty()) throw Error(ErrorCode::kConfig, "policy " + id + ": empty weighted tag");
  }
}

TextPolicy text_policy_from_json(const nlohmann::json& j) {
  TextPolicy p;
  try {
    p.id = j.value("id", p.id);
    const auto& tid = j.at("template_id");
    if (tid.is_string()) {
      std::string s = tid.get<std::string>();
      if (!s.starts_with("custom:"))
        throw Error(ErrorCode::kConfig, "template_id string must be 'custom:<name>'");
      p.custom_template = s.substr(7);
    } else {
      p.template_id = tid.get<int>();
      p.requires_original_text = p.template_id > 5;
    }
    if (j.contains("requires_original_text"))
      p.requires_original_text = j.at("requires_original_text").get<bool>();
    for (const auto& e : j.value("tag_edits", nlohmann::json::array())) {
      TagEdit edit;
      edit.op = parse_edit_op(e.at("op").get<std::string>());
      edit.target = normalize_tag(e.at("target").get<std::string>());
      if (e.contains("replacement") && !e.at("replacement").is_null())
        edit.replacement = normalize_tag(e.at("replacement").get<std::string>());
      edit.category = parse_tag_category(e.value("category", std::string("objects")));
      p.tag_edits.push_back(std::move(edit));
    }
    p.style_constraints =
        j.value("style_constraints", std::vector<std::string>{});
    p.safe_default_constraints = j.value("safe_default_constraints", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid text policy: ") + e.what());
  }
  if (p.custom_template.empty()) p.validate();
  else for (const auto& e : p.tag_edits) e.validate();
  return p;
}

nlohmann::json to_json(const TextPolicy& p) {
  nlohmann::json j;
  j["id"] = p.id;
  if (p.custom_template.empty()) j["template_id"] = p.template_id;
  else j["template_id"] = "custom:" + p.custom_template;
  j["requires_original_text"] = p.requires_original_text;
  auto edits = nlohmann::json::array();
  for (const auto& e : p.tag_edits) {
    nlohmann::json je = {{"op", to_string(e.op)},
                         {"target", e.target},
                         {"category", to_string(e.category)}};
    if (e.replacement) je["replacement"] = *e.replacement;
    edits.push_back(std::move(je));
  }
  j["tag_edits"] = std::move(edits);
  j["style_constraints"] = p.style_constraints;
  j["safe_default_constraints"] = p.safe_default_constraints;
  return j;
}

ImagePolicy image_policy_from_json(const nlohmann::json& j) {
  ImagePolicy p;
  try {
    p.id = j.value("id", p.id);
    p.style = parse_image_style(j.value("style", std::string("real")));
    if (j.contains("tag_weights"))
      for (const auto& [tag, w] : j.at("tag_weights").items())
        p.tag_weights[normalize_tag(tag)] = w.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid image policy: ") + e.what());
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const ImagePolicy& p) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [tag, w] : p.tag_weights) weights[tag] = w;
  return {{"id", p.id}, {"style", to_string(p.style)}, {"tag_weights", std::move(weights)}};
}

std::vector<TextPolicy> load_text_policies(const std::string& path) {
  return load_policies<TextPolicy>(path, text_policy_from_json);
}

std::vector<ImagePolicy> load_image_policies(const std::string& path) {
  return load_policies<ImagePolicy>(path, image_policy_from_json);
}

EditResult apply_tag_edits(const VisualTags& tags, const std::vector<TagEdit>& edits) {
  std::array<std::vector<std::string>, 3> lists = {tags.objects(), tags.attributes(),
                                                   tags.relations()};
  EditReport report;
  for (const auto& edit : edits) {
    auto& list = lists[static_cast<size_t>(edit.category)];
    std::string target = normalize_tag(edit.target);
    auto it = std::find(list.begin(), list.end(), target);
    switch (edit.op) {
      case EditOp::kRemove:
        if (it == list.end()) {
          report.unmatched.push_back(edit);
          continue;
        }
        list.erase(it);
        break;
      case EditOp::kAdd:
        if (it == list.end() && !target.empty()) list.push_back(target);
        break;
      case EditOp::kReplace: {
        if (it == list.end()) {
          report.unmatched.push_back(edit);
          continue;
        }
        std::string repl = normalize_tag(edit.replacement.value_or(""));
        bool exists = std::find(list.begin(), list.end(), repl) != list.end();
        if (exists || repl.empty()) list.erase(it);
        else *it = repl;
        break;
      }
    }
    ++report.applied;
  }
  return {VisualTags(std::move(lists[0]), std::move(lists[1]), std::move(lists[2])),
          std::move(report)};
}

std::string join_phrases(const VisualTags& tags) {
  std::string out;
  std::unordered_set<std::string> seen;
  for (const auto& tag : tags.all()) {
    if (!seen.insert(tag).second) continue;
    if (!out.empty()) out += ", ";
    out += tag;
  }
  return out;
}

std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      size_t close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

Instruction render_text_instruction(const VisualTags& tags,
                                    const std::optional<std::string>& original_text,
                                    const TextPolicy& policy, const TemplateRegistry* registry) {
  policy.validate(registry);
  std::string_view tmpl;
  Instruction ins;
  ins.policy_id = policy.id;
  if (policy.custom_template.empty()) {
    tmpl = builtin_text_template(policy.template_id);
    ins.template_key = std::to_string(policy.template_id);
  } else {
    tmpl = registry->custom(policy.custom_template);
    ins.template_key = "custom:" + policy.custom_template;
  }
  if (policy.requires_original_text && !original_text)
    throw Error(ErrorCode::kPrecondition, "template requires caption", "3a");

  VisualTags edited = apply_tag_edits(tags, policy.tag_edits).tags;
  if (edited.empty()) throw Error(ErrorCode::kPrecondition, "no tags to render", "3a");

  std::map<std::string, std::string> values = {{"phrases", join_phrases(edited)}};
  if (policy.requires_original_text) values["caption"] = *original_text;

  size_t split = content_split(tmpl);
  ins.task_template = std::string(tmpl.substr(0, split));
  ins.task_content = substitute(tmpl.substr(split), values);

  std::vector<std::string_view> constraints;
  if (policy.safe_default_constraints) constraints.push_back(kSafeDefaultConstraints);
  for (const auto& c : policy.style_constraints) constraints.push_back(c);
  for (auto c : constraints) {
    ins.task_constraint += ' ';
    ins.task_constraint += c;
  }
  ins.rendered_text = ins.task_template + ins.task_content + ins.task_constraint;
  return ins;
}

std::string render_image_instruction(std::string_view prompt, const ImagePolicy& policy) {
  policy.validate();
  std::vector<std::pair<std::string, double>> weighted(policy.tag_weights.begin(),
                                                       policy.tag_weights.end());
  std::stable_sort(weighted.begin(), weighted.end(), [](const auto& a, const auto& b) {
    return a.first.size() > b.first.size();
  });

  std::string rewritten;
  rewritten.reserve(prompt.size() + 16);
  size_t i = 0;
  while (i < prompt.size()) {
    bool at_start = i == 0 || !is_word_byte(static_cast<unsigned char>(prompt[i - 1]));
    bool matched = false;
    if (at_start) {
      for (const auto& [tag, w] : weighted) {
        size_t end = i + tag.size();
        if (!iequal_at(prompt, i, tag)) continue;
        if (end < prompt.size() && is_word_byte(static_cast<unsigned char>(prompt[end]))) continue;
        rewritten += '(';
        rewritten.append(prompt.substr(i, tag.size()));
        rewritten += ':';
        rewritten += format_weight(w);
        rewritten += ')';
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) rewritten.push_back(prompt[i++]);
  }
  return substitute(image_style_template(policy.style), {{"prompt", rewritten}});
}

}  // namespace tagsynth
