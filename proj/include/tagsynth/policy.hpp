#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagsynth/tagspace.hpp"

namespace tagsynth {

// ---------------------------------------------------------------------------
// Template registry
// ---------------------------------------------------------------------------

inline constexpr int kNumTextTemplates = 10;

// Built-in text template text, id 1..10. Ids 1..5 take only {phrases};
// 6..10 also embed the original caption through {caption}.
std::string_view builtin_text_template(int template_id);

// Constraint sentence attached when a policy asks for safe defaults.
extern const std::string_view kSafeDefaultConstraints;

enum class ImageStyle { kReal, kNocap, kIsometric, kEnhance, kQuality };

const char* to_string(ImageStyle style);
ImageStyle parse_image_style(std::string_view name);
std::string_view image_style_template(ImageStyle style);

// Built-in templates are fixed; user templates live in their own namespace
// and are looked up by name, so they can never shadow a built-in id.
class TemplateRegistry {
 public:
  static constexpr int kVersion = 1;

  void add_custom(const std::string& name, std::string text);
  bool has_custom(const std::string& name) const { return custom_.count(name) > 0; }
  const std::string& custom(const std::string& name) const;

 private:
  std::map<std::string, std::string> custom_;
};

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

enum class EditOp { kRemove, kAdd, kReplace };

struct TagEdit {
  EditOp op = EditOp::kRemove;
  std::string target;
  std::optional<std::string> replacement;  // present iff op == kReplace
  TagCategory category = TagCategory::kObjects;

  // Throws Error(kConfig) when the replacement invariant is violated.
  void validate() const;
};

struct TextPolicy {
  std::string id = "text-default";
  int template_id = 1;          // built-in id, ignored when custom_template is set
  std::string custom_template;  // name in TemplateRegistry, empty for built-ins
  std::vector<TagEdit> tag_edits;
  std::vector<std::string> style_constraints;
  bool requires_original_text = false;
  bool safe_default_constraints = false;

  // Checks template id range, the caption requirement split and every edit.
  void validate(const TemplateRegistry* registry = nullptr) const;
};

// Builds a policy for a built-in template with requires_original_text derived.
TextPolicy make_text_policy(int template_id, std::string id = "text-default");

struct ImagePolicy {
  std::string id = "image-default";
  ImageStyle style = ImageStyle::kReal;
  std::map<std::string, double> tag_weights;  // normalized tag -> weight in (0, 2]

  void validate() const;
};

TextPolicy text_policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TextPolicy& p);
ImagePolicy image_policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ImagePolicy& p);

// Reads a policy file: one JSON document, a JSON array, or JSON lines.
std::vector<TextPolicy> load_text_policies(const std::string& path);
std::vector<ImagePolicy> load_image_policies(const std::string& path);

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

struct EditReport {
  size_t applied = 0;
  std::vector<TagEdit> unmatched;  // remove/replace whose target was absent
};

struct EditResult {
  VisualTags tags;
  EditReport report;
};

// Applies edits in order. Unmatched remove/replace targets are reported, not
// fatal.
EditResult apply_tag_edits(const VisualTags& tags, const std::vector<TagEdit>& edits);

// Comma-joined tags, objects then attributes then relations, first
// occurrence kept when a tag appears in several lists.
std::string join_phrases(const VisualTags& tags);

// An LLM instruction. rendered_text == task_template + task_content +
// task_constraint; the content and constraint parts carry their own leading
// separator.
struct Instruction {
  std::string rendered_text;
  std::string task_template;
  std::string task_content;
  std::string task_constraint;
  std::string policy_id;
  std::string template_key;  // "1".."10" or "custom:<name>"
};

Instruction render_text_instruction(const VisualTags& tags,
                                    const std::optional<std::string>& original_text,
                                    const TextPolicy& policy,
                                    const TemplateRegistry* registry = nullptr);

// Rewrites weighted tags in `prompt` as "(tag:w.w)" and wraps the result in
// the style template.
std::string render_image_instruction(std::string_view prompt, const ImagePolicy& policy);

// Fills {caption}/{phrases} in one pass; substituted text is never rescanned.
std::string substitute(std::string_view tmpl,
                       const std::map<std::string, std::string>& values);

}  // namespace tagsynth
