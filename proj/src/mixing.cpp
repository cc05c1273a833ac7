#include "tagsynth/mixing.hpp"

#include <map>
#include <numeric>
#include <random>
#include <set>

#include "tagsynth/error.hpp"

namespace tagsynth {

namespace {

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform index in [0,n) by multiply-high.
size_t pick(std::mt19937_64& rng, size_t n) {
  return static_cast<size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

SampleRecord redraw(const SampleRecord& r, size_t k) {
  SampleRecord out = r;
  out.id = r.id + "@" + std::to_string(k);
  return out;
}

const Manifest* find_variant(const Manifest& original, const std::vector<Manifest>& synthetic,
                             std::string_view variant) {
  for (const auto& m : synthetic)
    if (m.header.variant == variant) return &m;
  if (original.header.variant == variant) return &original;
  return nullptr;
}

Manifest paper_mix(const Manifest& original, const std::vector<Manifest>& synthetic) {
  const Manifest* cap = find_variant(original, synthetic, "cap");
  const Manifest* capimg = find_variant(original, synthetic, "capimg");
  if (!cap || !capimg) {
    std::string missing = !cap && !capimg ? "cap and capimg" : !cap ? "cap" : "capimg";
    throw Error(ErrorCode::kConfig, "paper_mix needs a " + missing + " variant manifest");
  }
  std::map<std::string, const SampleRecord*> by_parent;
  for (const auto& r : capimg->records)
    if (r.provenance) by_parent.emplace(r.provenance->parent_id, &r);

  Manifest out;
  std::set<std::string> seen;
  for (const auto& r : cap->records) {
    if (!r.provenance) continue;
    auto it = by_parent.find(r.provenance->parent_id);
    if (it == by_parent.end() || !seen.insert(r.provenance->parent_id).second) continue;
    out.records.push_back(r);
    out.records.push_back(*it->second);
  }
  return out;
}

}  // namespace

const char* to_string(MixRule r) { return r == MixRule::kRatio ? "ratio" : "paper_mix"; }

MixRule parse_mix_rule(std::string_view s) {
  if (s == "ratio") return MixRule::kRatio;
  if (s == "paper_mix") return MixRule::kPaperMix;
  throw Error(ErrorCode::kConfig, "unknown mix rule '" + std::string(s) + "'");
}

void MixConfig::validate() const {
  if (!(p_r > 0.0 && p_r <= 1.0))
    throw Error(ErrorCode::kConfig, "p_r must be in (0, 1], got " + std::to_string(p_r));
}

Manifest mix_manifests(const Manifest& original, const std::vector<Manifest>& synthetic,
                       const MixConfig& cfg, size_t total) {
  cfg.validate();
  Manifest out;
  if (cfg.rule == MixRule::kPaperMix) {
    out = paper_mix(original, synthetic);
  } else {
    if (total < 1) throw Error(ErrorCode::kConfig, "total must be >= 1");
    if (original.empty()) throw Error(ErrorCode::kPrecondition, "original manifest is empty");
    std::vector<const Manifest*> pools;
    for (const auto& m : synthetic)
      if (!m.empty()) pools.push_back(&m);
    if (pools.empty() && cfg.p_r < 1.0)
      throw Error(ErrorCode::kPrecondition, "no non-empty synthetic manifest to draw from");
    std::mt19937_64 rng(cfg.seed);
    size_t next_pool = 0;
    out.records.reserve(total);
    for (size_t k = 0; k < total; ++k) {
      bool take_original = unit(rng) < cfg.p_r;
      const Manifest& src = take_original ? original : *pools[next_pool++ % pools.size()];
      out.records.push_back(redraw(src.records[pick(rng, src.size())], k));
    }
  }
  out.header.name = "mix";
  out.header.variant = "mix";
  out.header.count = out.records.size();
  out.header.meta["rule"] = to_string(cfg.rule);
  out.header.meta["seed"] = cfg.seed;
  if (cfg.rule == MixRule::kRatio) {
    out.header.meta["p_r"] = cfg.p_r;
    out.header.meta["total"] = total;
  }
  return out;
}

double epoch_budget(std::uint64_t original_count, std::uint64_t synthetic_count, double epochs) {
  if (original_count == 0) throw Error(ErrorCode::kPrecondition, "original count must be > 0");
  if (!(epochs > 0)) throw Error(ErrorCode::kPrecondition, "epochs must be > 0");
  return epochs * static_cast<double>(original_count) /
         static_cast<double>(original_count + synthetic_count);
}

Fraction epoch_budget_exact(std::uint64_t original_count, std::uint64_t synthetic_count,
                            std::uint64_t epochs) {
  if (original_count == 0) throw Error(ErrorCode::kPrecondition, "original count must be > 0");
  if (epochs == 0) throw Error(ErrorCode::kPrecondition, "epochs must be > 0");
  unsigned __int128 num = static_cast<unsigned __int128>(epochs) * original_count;
  unsigned __int128 den = static_cast<unsigned __int128>(original_count) + synthetic_count;
  unsigned __int128 a = num, b = den;
  while (b) {
    auto t = a % b;
    a = b;
    b = t;
  }
  num /= a;
  den /= a;
  if (num > UINT64_MAX || den > UINT64_MAX)
    throw Error(ErrorCode::kPrecondition, "epoch budget does not fit in 64 bits");
  return {static_cast<std::uint64_t>(num), static_cast<std::uint64_t>(den)};
}

}  // namespace tagsynth
