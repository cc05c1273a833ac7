#include "tagsynth/filter.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tagsynth/error.hpp"
#include "tagsynth/parallel.hpp"

namespace tagsynth {

void FilterConfig::validate() const {
  if (!(p_f >= 0.0 && p_f <= 1.0)) throw Error(ErrorCode::kConfig, "p_f must be in [0, 1]");
  if (!check_text && !check_image)
    throw Error(ErrorCode::kConfig, "filter apply_to must name text and/or image");
}

FilterConfig filter_config_from_json(const nlohmann::json& j) {
  FilterConfig c;
  try {
    c.p_f = j.value("p_f", c.p_f);
    c.match.mode = parse_match_mode(j.value("mode", std::string(to_string(c.match.mode))));
    c.match.plural_folding = j.value("plural_folding", c.match.plural_folding);
    if (j.contains("apply_to")) {
      c.check_text = c.check_image = false;
      for (const auto& v : j["apply_to"]) {
        std::string s = v.get<std::string>();
        if (s == "text") c.check_text = true;
        else if (s == "image") c.check_image = true;
        else throw Error(ErrorCode::kConfig, "unknown filter target '" + s + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid filter config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::ordered_json to_json(const FilterConfig& c) {
  nlohmann::ordered_json j;
  j["p_f"] = c.p_f;
  j["mode"] = to_string(c.match.mode);
  j["plural_folding"] = c.match.plural_folding;
  auto apply = nlohmann::ordered_json::array();
  if (c.check_text) apply.push_back("text");
  if (c.check_image) apply.push_back("image");
  j["apply_to"] = std::move(apply);
  // Every tag list counts alike in the ratio.
  j["tag_weighting"] = "uniform";
  return j;
}

const char* to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::kPass: return "pass";
    case DecisionKind::kReject: return "reject";
    case DecisionKind::kError: return "quarantine";
  }
  return "reject";
}

Decision filter_text_sample(const VisualTags& tags, std::string_view synthetic_text,
                            const FilterConfig& cfg) {
  if (tags.empty()) return {DecisionKind::kReject, std::nullopt, "no tags"};
  double ratio = tag_presence_ratio(tags, synthetic_text, cfg.match);
  if (ratio >= cfg.p_f) return {DecisionKind::kPass, ratio, ""};
  return {DecisionKind::kReject, ratio, "below threshold"};
}

Decision filter_image_sample(std::string_view starting_text, const ImageRef& synthetic_image,
                             const FilterConfig& cfg, ModelStack& models) {
  VisualTags retagged;
  try {
    retagged = models.tag_image(synthetic_image);
  } catch (const Error& e) {
    std::string where = e.stage().empty() ? "vtm" : e.stage();
    return {DecisionKind::kError, std::nullopt, where + ": " + e.what()};
  }
  return filter_text_sample(retagged, starting_text, cfg);
}

Decision evaluate_candidate(const FilterCandidate& c, const FilterConfig& cfg,
                            ModelStack* models) {
  bool run_text = cfg.check_text && c.tags && c.synthetic_text;
  bool run_image = cfg.check_image && c.synthetic_image && c.starting_text && models;
  if (!run_text && !run_image) {
    std::string reason;
    if (cfg.check_text) reason = !c.tags ? "missing tags" : "missing text";
    else reason = !c.synthetic_image ? "missing image" : "missing starting text";
    return {DecisionKind::kError, std::nullopt, reason};
  }

  Decision combined{DecisionKind::kPass, std::nullopt, ""};
  auto fold = [&](const Decision& d) {
    if (d.ratio) combined.ratio = combined.ratio ? std::min(*combined.ratio, *d.ratio) : *d.ratio;
    if (!d.passed() && combined.passed()) {
      combined.kind = d.kind;
      combined.reason = d.reason;
    }
  };
  if (run_text) fold(filter_text_sample(*c.tags, *c.synthetic_text, cfg));
  if (run_image) {
    Decision d = filter_image_sample(*c.starting_text, *c.synthetic_image, cfg, *models);
    if (d.kind == DecisionKind::kError) return d;
    fold(d);
  }
  return combined;
}

size_t ratio_bin(double ratio) {
  // The epsilon keeps exact tenths such as 3/10 out of the bin below.
  auto bin = static_cast<long>(std::floor(ratio * static_cast<double>(kRatioBins) + 1e-9));
  return static_cast<size_t>(std::clamp<long>(bin, 0, kRatioBins - 1));
}

void FilterReport::add(SampleOutcome outcome) {
  ++evaluated;
  const Decision& d = outcome.decision;
  switch (d.kind) {
    case DecisionKind::kPass: ++passed; break;
    case DecisionKind::kReject: ++rejected; break;
    case DecisionKind::kError: ++quarantined; break;
  }
  if (d.ratio) ++ratio_histogram[ratio_bin(*d.ratio)];
  if (!d.reason.empty()) ++reasons[d.reason];
  samples.push_back(std::move(outcome));
}

nlohmann::ordered_json FilterReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = tagsynth::to_json(config);
  j["evaluated"] = evaluated;
  j["passed"] = passed;
  j["rejected"] = rejected;
  j["quarantined"] = quarantined;
  j["pass_rate"] = pass_rate();
  j["ratio_histogram"] = ratio_histogram;
  nlohmann::ordered_json reasons_j = nlohmann::ordered_json::object();
  for (const auto& [reason, n] : reasons) reasons_j[reason] = n;
  j["reasons"] = std::move(reasons_j);
  auto samples_j = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    nlohmann::ordered_json sj;
    sj["id"] = s.id;
    sj["status"] = tagsynth::to_string(s.decision.kind);
    if (s.decision.ratio) sj["ratio"] = *s.decision.ratio;
    else sj["ratio"] = nullptr;
    if (!s.decision.reason.empty()) sj["reason"] = s.decision.reason;
    samples_j.push_back(std::move(sj));
  }
  j["samples"] = std::move(samples_j);
  return j;
}

std::string FilterReport::histogram_csv() const {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count\n";
  for (size_t i = 0; i < kRatioBins; ++i)
    out << static_cast<double>(i) / kRatioBins << ',' << static_cast<double>(i + 1) / kRatioBins
        << ',' << ratio_histogram[i] << '\n';
  return out.str();
}

FilterBatchResult filter_batch(const std::vector<FilterCandidate>& candidates,
                               const FilterConfig& cfg, ModelStack* models,
                               size_t concurrency) {
  cfg.validate();
  std::vector<Decision> decisions(candidates.size());
  parallel_for(candidates.size(), concurrency, [&](size_t i) {
    try {
      decisions[i] = evaluate_candidate(candidates[i], cfg, models);
    } catch (const Error& e) {
      decisions[i] = {DecisionKind::kError, std::nullopt, e.what()};
    }
  });

  FilterBatchResult result;
  result.report.config = cfg;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (decisions[i].passed()) {
      SampleRecord rec = candidates[i].record;
      if (rec.provenance) rec.provenance->filter_ratio = decisions[i].ratio;
      result.passed.push_back(std::move(rec));
    }
    result.report.add({candidates[i].record.id, decisions[i]});
  }
  return result;
}

}  // namespace tagsynth
