#include "tagsynth/longtail.hpp"

#include <map>

#include "tagsynth/digest.hpp"
#include "tagsynth/error.hpp"

namespace tagsynth {

TailResult augment_tail_classes(const Manifest& manifest, const TailOptions& opts,
                                ModelStack& models) {
  if (opts.per_class < 1) throw Error(ErrorCode::kConfig, "per_class must be >= 1");
  opts.image_policy.validate();

  struct ClassInfo {
    size_t images = 0;
    std::string first_id;
  };
  std::map<std::string, ClassInfo> classes;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!r.class_label)
      throw Error(ErrorCode::kPrecondition,
                  "record '" + r.id + "' (line " + std::to_string(i + 1) + ") has no class_label");
    auto& c = classes[*r.class_label];
    if (c.first_id.empty()) c.first_id = r.id;
    if (r.image_ref) ++c.images;
  }

  TailResult result;
  for (const auto& name : opts.all_classes)
    if (!classes.count(name)) result.warnings.push_back("class '" + name + "' has no records; skipped");

  for (const auto& [name, info] : classes) {
    if (info.images >= opts.tail_threshold) continue;
    result.tail_classes.push_back(name);
    std::string prompt = render_image_instruction(name, opts.image_policy);
    for (size_t j = 0; j < opts.per_class; ++j) {
      std::string id = name + "#tail" + std::to_string(j);
      std::uint64_t seed = digest64({std::to_string(opts.seed), name, std::to_string(j)});
      SampleRecord rec;
      rec.id = id;
      rec.image_ref = models.generate_image(prompt, seed);
      rec.class_label = name;
      rec.origin = Origin::kSynthetic;
      rec.provenance = Provenance{info.first_id, "tail:3b->2c", {opts.image_policy.id}, seed, {}};
      result.output.records.push_back(std::move(rec));
    }
  }

  result.output.header.name = "tail";
  result.output.header.variant = "tail";
  result.output.header.count = result.output.records.size();
  auto& meta = result.output.header.meta;
  meta["tail_threshold"] = opts.tail_threshold;
  meta["per_class"] = opts.per_class;
  meta["style"] = to_string(opts.image_policy.style);
  meta["seed"] = opts.seed;
  return result;
}

}  // namespace tagsynth
