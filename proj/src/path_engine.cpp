#include "tagsynth/path_engine.hpp"

#include <array>
#include <chrono>

#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

constexpr std::array<const char*, 10> kNodeNames = {"1a", "1b", "1c", "1d", "1e",
                                                    "2a", "2b", "2c", "3a", "3b"};

using N = NodeId;

constexpr std::array<std::pair<NodeId, NodeId>, 12> kEdges = {{
    {N::kRealImage, N::kTagger},
    {N::kSynthImage, N::kTagger},
    {N::kTagger, N::kVisualTags},
    {N::kVisualTags, N::kTextController},
    {N::kRealText, N::kTextController},
    {N::kSynthText, N::kTextController},
    {N::kTextController, N::kLanguageModel},
    {N::kLanguageModel, N::kSynthText},
    {N::kSynthText, N::kImageController},
    {N::kRealText, N::kImageController},
    {N::kImageController, N::kImageModel},
    {N::kImageModel, N::kSynthImage},
}};

std::string join_nodes(const std::vector<NodeId>& nodes) {
  std::string out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (i) out += "->";
    out += to_string(nodes[i]);
  }
  return out;
}

bool is_text_node(NodeId id) { return id == N::kRealText || id == N::kSynthText; }

}  // namespace

NodeKind kind_of(NodeId id) {
  switch (id) {
    case N::kRealImage:
    case N::kRealText:
    case N::kSynthImage:
    case N::kSynthText:
    case N::kVisualTags: return NodeKind::kData;
    case N::kTagger:
    case N::kLanguageModel:
    case N::kImageModel: return NodeKind::kModel;
    case N::kTextController:
    case N::kImageController: return NodeKind::kController;
  }
  return NodeKind::kData;
}

const char* to_string(NodeId id) { return kNodeNames[static_cast<size_t>(id)]; }

std::optional<NodeId> parse_node_id(std::string_view s) {
  for (size_t i = 0; i < kNodeNames.size(); ++i)
    if (s == kNodeNames[i]) return static_cast<NodeId>(i);
  return std::nullopt;
}

bool is_legal_edge(NodeId from, NodeId to) {
  for (const auto& [a, b] : kEdges)
    if (a == from && b == to) return true;
  return false;
}

const char* to_string(PathRule rule) {
  switch (rule) {
    case PathRule::kEmpty: return "empty";
    case PathRule::kUnknownNode: return "unknown-node";
    case PathRule::kEndpointNotData: return "endpoint-not-data";
    case PathRule::kUnsuppliedStart: return "unsupplied-start";
    case PathRule::kIllegalEdge: return "illegal-edge";
    case PathRule::kNoModel: return "no-model";
    case PathRule::kSideInputWithoutController: return "side-input-without-controller";
    case PathRule::kTaggerLoopBound: return "tagger-loop-bound";
  }
  return "unknown";
}

std::string SynthesisPath::literal() const {
  std::string s = join_nodes(nodes);
  if (text_side_input) s += "+1b@3a";
  return s;
}

bool SynthesisPath::visits(NodeId id) const {
  return std::find(nodes.begin(), nodes.end(), id) != nodes.end();
}

SynthesisPath validate_path(const std::vector<NodeId>& nodes, bool text_side_input,
                            std::string name) {
  if (nodes.empty()) throw PathError(PathRule::kEmpty, 0, "path is empty");
  if (kind_of(nodes.front()) != NodeKind::kData)
    throw PathError(PathRule::kEndpointNotData, 0,
                    std::string("path must start at a data node, not ") + to_string(nodes.front()));
  if (nodes.front() == N::kVisualTags)
    throw PathError(PathRule::kUnsuppliedStart, 0,
                    "path cannot start at 1e: visual tags only come from 2a");
  int tagger_visits = 0;
  bool has_model = false;
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (i > 0 && !is_legal_edge(nodes[i - 1], nodes[i]))
      throw PathError(PathRule::kIllegalEdge, i,
                      std::string("illegal edge ") + to_string(nodes[i - 1]) + "->" +
                          to_string(nodes[i]));
    if (nodes[i] == N::kTagger && ++tagger_visits > kMaxTaggerVisits)
      throw PathError(PathRule::kTaggerLoopBound, i,
                      "path visits 2a more than " + std::to_string(kMaxTaggerVisits) + " times");
    has_model = has_model || kind_of(nodes[i]) == NodeKind::kModel;
  }
  if (kind_of(nodes.back()) != NodeKind::kData)
    throw PathError(PathRule::kEndpointNotData, nodes.size() - 1,
                    std::string("path must end at a data node, not ") + to_string(nodes.back()));
  if (!has_model) throw PathError(PathRule::kNoModel, 0, "path visits no model node");
  if (text_side_input && std::find(nodes.begin(), nodes.end(), N::kTextController) == nodes.end())
    throw PathError(PathRule::kSideInputWithoutController, 0,
                    "side input 1b@3a needs a path through 3a");

  SynthesisPath path;
  path.nodes = nodes;
  path.text_side_input = text_side_input;
  path.name = name.empty() ? path.literal() : std::move(name);
  return path;
}

const std::map<std::string, SynthesisPath>& builtin_paths() {
  static const std::map<std::string, SynthesisPath> paths = [] {
    std::map<std::string, SynthesisPath> m;
    auto add = [&](const std::string& name, std::vector<NodeId> nodes, bool side = false) {
      m.emplace(name, validate_path(nodes, side, name));
    };
    std::vector<NodeId> sp1 = {N::kRealImage,      N::kTagger,        N::kVisualTags,
                               N::kTextController, N::kLanguageModel, N::kSynthText};
    std::vector<NodeId> sp3 = sp1;
    sp3.insert(sp3.end(), {N::kImageController, N::kImageModel, N::kSynthImage});
    add("sp1", sp1);
    add("sp2", sp1, true);
    add("sp3", sp3);
    add("sp4", {N::kRealText, N::kImageController, N::kImageModel, N::kSynthImage});
    add("sp_text_loop", {N::kRealText, N::kTextController, N::kLanguageModel, N::kSynthText,
                         N::kImageController, N::kImageModel, N::kSynthImage});
    return m;
  }();
  return paths;
}

SynthesisPath parse_path_literal(std::string_view literal) {
  std::string s;
  for (size_t i = 0; i < literal.size(); ++i) {
    // U+2192 RIGHTWARDS ARROW is accepted as a spelling of "->".
    if (literal.substr(i, 3) == "\xE2\x86\x92") {
      s += "->";
      i += 2;
    } else if (!std::isspace(static_cast<unsigned char>(literal[i]))) {
      s.push_back(literal[i]);
    }
  }
  if (auto it = builtin_paths().find(s); it != builtin_paths().end()) return it->second;

  bool side = false;
  if (size_t plus = s.find('+'); plus != std::string::npos) {
    if (s.substr(plus + 1) != "1b@3a")
      throw Error(ErrorCode::kConfig, "unsupported side input '" + s.substr(plus + 1) +
                                          "' (only 1b@3a exists)");
    side = true;
    s.resize(plus);
  }
  std::vector<NodeId> nodes;
  size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    size_t arrow = s.find("->", pos);
    std::string tok = s.substr(pos, arrow == std::string::npos ? std::string::npos : arrow - pos);
    auto id = parse_node_id(tok);
    if (!id) throw PathError(PathRule::kUnknownNode, nodes.size(), "unknown node '" + tok + "'");
    nodes.push_back(*id);
    if (arrow == std::string::npos) break;
    pos = arrow + 2;
  }
  SynthesisPath path = validate_path(nodes, side);
  for (const auto& [name, builtin] : builtin_paths())
    if (builtin.nodes == path.nodes && builtin.text_side_input == path.text_side_input)
      return builtin;
  return path;
}

const NodeOutput* PathExecution::last(NodeId node) const {
  for (auto it = steps.rbegin(); it != steps.rend(); ++it)
    if (it->node == node) return &*it;
  return nullptr;
}

std::optional<std::string> PathExecution::text_of(NodeId node) const {
  const NodeOutput* out = last(node);
  if (!out) return std::nullopt;
  if (auto s = std::get_if<std::string>(&out->value)) return *s;
  return std::nullopt;
}

std::optional<ImageRef> PathExecution::image_of(NodeId node) const {
  const NodeOutput* out = last(node);
  if (!out) return std::nullopt;
  if (auto s = std::get_if<ImageRef>(&out->value)) return *s;
  return std::nullopt;
}

std::optional<VisualTags> PathExecution::tags_of(NodeId node) const {
  const NodeOutput* out = last(node);
  if (!out) return std::nullopt;
  if (auto s = std::get_if<VisualTags>(&out->value)) return *s;
  return std::nullopt;
}

void check_path_policies(const SynthesisPath& path, const TextPolicy& text_policy,
                         const TemplateRegistry* registry) {
  if (!path.visits(N::kTextController)) return;
  text_policy.validate(registry);
  bool needs_caption = text_policy.requires_original_text;
  for (size_t i = 1; i < path.nodes.size(); ++i) {
    if (path.nodes[i] != N::kTextController) continue;
    bool caption_available = path.text_side_input || is_text_node(path.nodes[i - 1]);
    if (needs_caption && !caption_available)
      throw Error(ErrorCode::kConfig, "policy " + text_policy.id + " uses template " +
                                          std::to_string(text_policy.template_id) +
                                          ", which requires a caption, but path " + path.name +
                                          " supplies none at 3a");
  }
  if (path.text_side_input && !needs_caption)
    throw Error(ErrorCode::kConfig,
                "path " + path.name + " side-loads the original text at 3a; policy " +
                    text_policy.id + " must use a caption-bearing template (6..10)");
}

PathExecution execute_path(const SynthesisPath& path, const SampleRecord& input,
                           const TextPolicy& text_policy, const ImagePolicy& image_policy,
                           std::uint64_t seed, ModelStack& models,
                           const TemplateRegistry* registry) {
  using Clock = std::chrono::steady_clock;
  PathExecution exec;
  exec.path = path;
  exec.input_id = input.id;
  exec.seed = seed;
  if (path.visits(N::kTextController)) exec.text_policy_id = text_policy.id;
  if (path.visits(N::kImageController)) exec.image_policy_id = image_policy.id;

  auto require_text = [&](const char* node) -> const std::string& {
    if (!input.text)
      throw Error(ErrorCode::kPrecondition,
                  "record " + input.id + " has no text for " + node, node);
    return *input.text;
  };
  auto require_image = [&](const char* node) -> const ImageRef& {
    if (!input.image_ref)
      throw Error(ErrorCode::kPrecondition,
                  "record " + input.id + " has no image for " + node, node);
    return *input.image_ref;
  };

  std::optional<ImageRef> image;
  std::optional<std::string> text;
  std::optional<VisualTags> tags;
  std::optional<Instruction> instruction;
  std::optional<std::string> image_prompt;
  int image_visits = 0;

  for (size_t i = 0; i < path.nodes.size(); ++i) {
    NodeId node = path.nodes[i];
    bool first = i == 0;
    NodeId prev = first ? path.nodes[i] : path.nodes[i - 1];
    const char* name = to_string(node);
    auto start = Clock::now();
    NodeOutput out{node, std::monostate{}, 0.0};
    try {
      switch (node) {
        case N::kRealImage:
          image = require_image(name);
          out.value = *image;
          break;
        case N::kRealText:
          text = require_text(name);
          out.value = *text;
          break;
        case N::kSynthImage:
          if (first) image = require_image(name);
          out.value = *image;
          break;
        case N::kSynthText:
          if (first) text = require_text(name);
          out.value = *text;
          break;
        case N::kVisualTags:
          out.value = *tags;
          break;
        case N::kTagger: {
          exec.taggings.push_back(models.tag_image_traced(*image));
          tags = exec.taggings.back().tags;
          break;
        }
        case N::kTextController: {
          std::optional<std::string> caption;
          VisualTags source;
          if (!first && prev == N::kVisualTags) {
            source = *tags;
          } else {
            source = VisualTags(content_words(*text), {}, {});
            caption = *text;
          }
          if (path.text_side_input) {
            const std::string& side = require_text("1b");
            exec.steps.push_back({N::kRealText, side, 0.0});
            caption = side;
          }
          EditResult edited = apply_tag_edits(source, text_policy.tag_edits);
          exec.edit_reports.push_back(edited.report);
          exec.rendered_tags = edited.tags;
          instruction = render_text_instruction(source, caption, text_policy, registry);
          out.value = *instruction;
          break;
        }
        case N::kLanguageModel:
          text = models.generate_text(*instruction);
          break;
        case N::kImageController:
          image_prompt = render_image_instruction(*text, image_policy);
          out.value = *image_prompt;
          break;
        case N::kImageModel: {
          std::uint64_t s =
              image_visits == 0 ? seed : digest64({std::to_string(seed), std::to_string(image_visits)});
          ++image_visits;
          image = models.generate_image(*image_prompt, s);
          break;
        }
      }
    } catch (const Error& e) {
      rethrow_with_stage(e, name);
    }
    out.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (kind_of(node) != NodeKind::kModel) exec.steps.push_back(std::move(out));
  }
  return exec;
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kCap: return "cap";
    case Variant::kImg: return "img";
    case Variant::kCapImg: return "capimg";
  }
  return "cap";
}

Variant parse_variant(std::string_view name) {
  if (name == "cap") return Variant::kCap;
  if (name == "img") return Variant::kImg;
  if (name == "capimg") return Variant::kCapImg;
  throw Error(ErrorCode::kConfig, "unknown variant '" + std::string(name) + "'");
}

std::pair<NodeId, NodeId> variant_nodes(Variant v) {
  switch (v) {
    case Variant::kCap: return {N::kRealImage, N::kSynthText};
    case Variant::kImg: return {N::kSynthImage, N::kRealText};
    case Variant::kCapImg: return {N::kSynthImage, N::kSynthText};
  }
  return {N::kRealImage, N::kSynthText};
}

SampleRecord pair_outputs(const PathExecution& exec, const SampleRecord& parent,
                          Variant variant) {
  auto [image_node, text_node] = variant_nodes(variant);
  // Real nodes the path did not visit come straight from the parent record.
  auto image = exec.image_of(image_node);
  if (!image && image_node == N::kRealImage) image = parent.image_ref;
  if (!image) throw Error(ErrorCode::kPrecondition, std::string("missing ") + to_string(image_node));
  auto text = exec.text_of(text_node);
  if (!text && text_node == N::kRealText) text = parent.text;
  if (!text) throw Error(ErrorCode::kPrecondition, std::string("missing ") + to_string(text_node));

  SampleRecord rec;
  rec.id = parent.id + "#" + to_string(variant);
  rec.image_ref = std::move(image);
  rec.text = std::move(text);
  rec.class_label = parent.class_label;
  rec.origin = Origin::kSynthetic;
  Provenance p;
  p.parent_id = parent.id;
  p.path_name = exec.path.name;
  if (!exec.text_policy_id.empty()) p.policy_ids.push_back(exec.text_policy_id);
  if (!exec.image_policy_id.empty()) p.policy_ids.push_back(exec.image_policy_id);
  p.seed = exec.seed;
  rec.provenance = std::move(p);
  return rec;
}

std::uint64_t derive_seed(std::uint64_t job_seed, std::string_view record_id,
                          std::string_view path_name) {
  return digest64({std::to_string(job_seed), record_id, path_name});
}

}  // namespace tagsynth
