#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tagsynth/backends.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/policy.hpp"
#include "tagsynth/record.hpp"

namespace tagsynth {

// Nodes of the synthesis graph. 1* are data, 2* models, 3* controllers.
enum class NodeId {
  kRealImage,        // 1a
  kRealText,         // 1b
  kSynthImage,       // 1c
  kSynthText,        // 1d
  kVisualTags,       // 1e
  kTagger,           // 2a
  kLanguageModel,    // 2b
  kImageModel,       // 2c
  kTextController,   // 3a
  kImageController,  // 3b
};

enum class NodeKind { kData, kModel, kController };

NodeKind kind_of(NodeId id);
const char* to_string(NodeId id);  // "1a", "2b", ...
std::optional<NodeId> parse_node_id(std::string_view s);

bool is_legal_edge(NodeId from, NodeId to);

// Maximum number of visits to the tagger in one path.
inline constexpr int kMaxTaggerVisits = 2;

struct SynthesisPath {
  std::string name;  // built-in name, or the canonical literal
  std::vector<NodeId> nodes;
  bool text_side_input = false;  // real text (1b) attached at the text controller

  std::string literal() const;  // "1a->2a->...", plus "+1b@3a" when attached
  bool visits(NodeId id) const;
  bool operator==(const SynthesisPath&) const = default;
};

// Which rule a rejected path broke.
enum class PathRule {
  kEmpty,
  kUnknownNode,
  kEndpointNotData,
  kUnsuppliedStart,  // 1e cannot come from an input record
  kIllegalEdge,
  kNoModel,
  kSideInputWithoutController,
  kTaggerLoopBound,
};

const char* to_string(PathRule rule);

class PathError : public Error {
 public:
  PathError(PathRule rule, size_t index, const std::string& message)
      : Error(ErrorCode::kConfig, message), rule_(rule), index_(index) {}
  PathRule rule() const { return rule_; }
  size_t index() const { return index_; }  // position of the offending node

 private:
  PathRule rule_;
  size_t index_;
};

// Throws PathError naming the first violated rule.
SynthesisPath validate_path(const std::vector<NodeId>& nodes, bool text_side_input = false,
                            std::string name = {});

// Parses "1a->2a->1e->3a->2b->1d" with an optional "+1b@3a" suffix, or a
// built-in name such as "sp3".
SynthesisPath parse_path_literal(std::string_view literal);

// sp1, sp2, sp3, sp4 and sp_text_loop.
const std::map<std::string, SynthesisPath>& builtin_paths();

// Output of one visited node.
struct NodeOutput {
  NodeId node;
  std::variant<std::monostate, std::string, ImageRef, VisualTags, Instruction> value;
  double elapsed_ms = 0.0;
};

struct PathExecution {
  SynthesisPath path;
  std::string input_id;
  std::uint64_t seed = 0;
  std::string text_policy_id;
  std::string image_policy_id;
  std::vector<NodeOutput> steps;        // data and controller nodes, in visit order
  std::vector<TaggingTrace> taggings;   // one per tagger visit
  std::vector<EditReport> edit_reports; // one per text controller visit
  // Tags the text controller rendered from, after edits (last visit).
  std::optional<VisualTags> rendered_tags;

  // Last output recorded for `node`, if the path visited it.
  const NodeOutput* last(NodeId node) const;
  std::optional<std::string> text_of(NodeId node) const;
  std::optional<ImageRef> image_of(NodeId node) const;
  std::optional<VisualTags> tags_of(NodeId node) const;
};

// Walks `path` for one input record. Backend errors propagate with the node
// id as stage; missing inputs are precondition errors.
PathExecution execute_path(const SynthesisPath& path, const SampleRecord& input,
                           const TextPolicy& text_policy, const ImagePolicy& image_policy,
                           std::uint64_t seed, ModelStack& models,
                           const TemplateRegistry* registry = nullptr);

// Throws Error(kConfig) when the path, policies and variant cannot work
// together (e.g. a side-loaded caption with a template that ignores it).
void check_path_policies(const SynthesisPath& path, const TextPolicy& text_policy,
                         const TemplateRegistry* registry = nullptr);

enum class Variant { kCap, kImg, kCapImg };

const char* to_string(Variant v);
Variant parse_variant(std::string_view name);

// Data nodes a variant pairs: cap (1a,1d), img (1c,1b), capimg (1c,1d).
std::pair<NodeId, NodeId> variant_nodes(Variant v);

// Builds the synthetic record for `variant`; `parent` is the input record.
SampleRecord pair_outputs(const PathExecution& exec, const SampleRecord& parent, Variant variant);

// Per-record generation seed from the job seed, record id and path name.
std::uint64_t derive_seed(std::uint64_t job_seed, std::string_view record_id,
                          std::string_view path_name);

}  // namespace tagsynth
