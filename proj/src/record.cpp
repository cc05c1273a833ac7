#include "tagsynth/record.hpp"

#include "tagsynth/error.hpp"

namespace tagsynth {

const char* to_string(Origin o) { return o == Origin::kReal ? "real" : "synthetic"; }

nlohmann::ordered_json to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  if (r.image_ref) j["image_ref"] = r.image_ref->value;
  if (r.text) j["text"] = *r.text;
  if (r.class_label) j["class_label"] = *r.class_label;
  j["origin"] = to_string(r.origin);
  if (r.provenance) {
    const auto& p = *r.provenance;
    nlohmann::ordered_json pj;
    pj["parent_id"] = p.parent_id;
    pj["path"] = p.path_name;
    pj["policy_ids"] = p.policy_ids;
    pj["seed"] = p.seed;
    if (p.filter_ratio) pj["filter_ratio"] = *p.filter_ratio;
    j["provenance"] = std::move(pj);
  }
  return j;
}

void validate_record(const SampleRecord& r) {
  if (r.id.empty()) throw Error(ErrorCode::kManifest, "record without id");
  if (!r.image_ref && !r.text)
    throw Error(ErrorCode::kManifest, "record " + r.id + " has neither image_ref nor text");
  if (r.origin == Origin::kSynthetic && !r.provenance)
    throw Error(ErrorCode::kManifest, "synthetic record " + r.id + " lacks provenance");
}

SampleRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kManifest, "record is not a JSON object");
  SampleRecord r;
  try {
    if (!j.contains("id")) throw Error(ErrorCode::kManifest, "missing field 'id'");
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (j.contains("image_ref") && !j["image_ref"].is_null())
      r.image_ref = ImageRef{j["image_ref"].get<std::string>()};
    if (j.contains("text") && !j["text"].is_null()) r.text = j["text"].get<std::string>();
    if (j.contains("class_label") && !j["class_label"].is_null())
      r.class_label = j["class_label"].is_string() ? j["class_label"].get<std::string>()
                                                   : j["class_label"].dump();
    std::string origin = j.value("origin", std::string("real"));
    if (origin == "real") r.origin = Origin::kReal;
    else if (origin == "synthetic") r.origin = Origin::kSynthetic;
    else throw Error(ErrorCode::kManifest, "unknown origin '" + origin + "'");
    if (j.contains("provenance") && !j["provenance"].is_null()) {
      const auto& pj = j["provenance"];
      Provenance p;
      p.parent_id = pj.at("parent_id").get<std::string>();
      p.path_name = pj.value("path", std::string());
      p.policy_ids = pj.value("policy_ids", std::vector<std::string>{});
      p.seed = pj.value("seed", std::uint64_t{0});
      if (pj.contains("filter_ratio") && !pj["filter_ratio"].is_null())
        p.filter_ratio = pj["filter_ratio"].get<double>();
      r.provenance = std::move(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, std::string("bad field type: ") + e.what());
  }
  validate_record(r);
  return r;
}

}  // namespace tagsynth
