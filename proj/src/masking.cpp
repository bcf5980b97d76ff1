#include "stseq/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stseq {

double sample_mask_rate(double sigma, Rng& rng, const MaskRateBounds& bounds) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("mask rate: sigma must be a finite non-negative value");
  }
  if (!(bounds.low <= bounds.mean && bounds.mean <= bounds.high)) {
    throw ConfigError("mask rate: mean outside [low, high]");
  }
  if (sigma == 0.0) return bounds.mean;
  std::normal_distribution<double> dist(bounds.mean, sigma);
  for (;;) {
    const double rho = dist(rng);
    if (rho >= bounds.low && rho <= bounds.high) return rho;
  }
}

std::size_t masked_count(std::size_t total, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ConfigError("mask rate " + std::to_string(rho) + " outside [0, 1]");
  }
  if (total == 0 || rho == 0.0) return 0;
  const double raw = std::nearbyint(rho * double(total));  // ties to even
  const auto n = static_cast<std::size_t>(std::max(raw, 0.0));
  return std::min(n, total - 1);
}

MaskPlan build_mask_plan(std::size_t frames, std::size_t slots, double rho,
                         Rng& rng) {
  if (frames * slots == 0) {
    throw ContractError("mask plan: needs at least one visual token");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ContractError("mask plan: rho must lie in [0,1]");
  }
  MaskPlan plan;
  plan.rho = rho;
  plan.frames = frames;
  plan.slots = slots;
  const std::size_t total = frames * slots;
  const std::size_t n = masked_count(total, rho);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n entries are a uniform n-subset.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  plan.masked.assign(order.begin(), order.begin() + n);
  std::sort(plan.masked.begin(), plan.masked.end());
  plan.kept.reserve(total - n);
  std::size_t m = 0;
  for (std::size_t f = 0; f < total; ++f) {
    if (m < plan.masked.size() && plan.masked[m] == f) {
      ++m;
    } else {
      plan.kept.push_back(f);
    }
  }
  return plan;
}

template <typename T>
TokenSequence<T> apply_mask(const TokenSequence<T>& seq, const MaskPlan& plan,
                            PositionPolicy policy) {
  if (seq.frames != plan.frames || seq.slots != plan.slots) {
    throw ContractError("apply_mask: plan built for " +
                        std::to_string(plan.frames) + "x" +
                        std::to_string(plan.slots) + " visual tokens, sequence has " +
                        std::to_string(seq.frames) + "x" + std::to_string(seq.slots));
  }
  std::vector<bool> drop(plan.total(), false);
  for (auto f : plan.masked) {
    if (f >= plan.total()) throw ContractError("apply_mask: masked index out of range");
    drop[f] = true;
  }
  std::vector<std::size_t> rows;
  TokenSequence<T> out;
  out.frames = seq.frames;
  out.slots = seq.slots;
  out.text_ids = seq.text_ids;
  std::size_t seen_visual = 0;
  for (std::size_t p = 0; p < seq.length(); ++p) {
    const OriginTag& tag = seq.origins[p];
    if (tag.kind == OriginKind::kVisual) {
      ++seen_visual;
      if (drop[std::size_t(tag.frame) * seq.slots + std::size_t(tag.slot)]) continue;
    }
    rows.push_back(p);
    out.origins.push_back(tag);
    out.position_ids.push_back(policy == PositionPolicy::kKeep
                                   ? seq.position_ids[p]
                                   : std::int64_t(out.position_ids.size()));
  }
  if (seen_visual != plan.total()) {
    throw ContractError("apply_mask: sequence carries " +
                        std::to_string(seen_visual) +
                        " visual tokens, plan expects " +
                        std::to_string(plan.total()));
  }
  if (plan.masked.empty()) {
    out.embeddings = seq.embeddings;
  } else {
    out.embeddings = gather_rows(seq.embeddings, std::span<const std::size_t>(rows));
  }
  return out;
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::kOff: return "off";
    case MaskMode::kStatic: return "static";
    case MaskMode::kDynamicNormal: return "dynamic-normal";
    case MaskMode::kDynamicUniform: return "dynamic-uniform";
  }
  return "off";
}

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "off") return MaskMode::kOff;
  if (name == "static") return MaskMode::kStatic;
  if (name == "dynamic-normal" || name == "normal") return MaskMode::kDynamicNormal;
  if (name == "dynamic-uniform" || name == "uniform") return MaskMode::kDynamicUniform;
  throw ConfigError("unknown mask mode '" + name + "'");
}

void MaskSchedule::validate() const {
  switch (mode) {
    case MaskMode::kOff:
      return;
    case MaskMode::kStatic:
      if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("mask: static rho outside [0,1]");
      return;
    case MaskMode::kDynamicNormal:
      if (!(sigma >= 0.0)) throw ConfigError("mask: sigma must be non-negative");
      [[fallthrough]];
    case MaskMode::kDynamicUniform:
      if (!(bounds.low >= 0.0 && bounds.high <= 1.0 && bounds.low <= bounds.high)) {
        throw ConfigError("mask: bounds must satisfy 0 <= low <= high <= 1");
      }
      if (mode == MaskMode::kDynamicNormal &&
          !(bounds.low <= bounds.mean && bounds.mean <= bounds.high)) {
        throw ConfigError("mask: mean outside [low, high]");
      }
      return;
  }
}

double MaskSchedule::sample(Rng& rng) const {
  switch (mode) {
    case MaskMode::kOff: return 0.0;
    case MaskMode::kStatic: return rho;
    case MaskMode::kDynamicNormal: return sample_mask_rate(sigma, rng, bounds);
    case MaskMode::kDynamicUniform: {
      std::uniform_real_distribution<double> dist(bounds.low, bounds.high);
      return dist(rng);
    }
  }
  return 0.0;
}

template TokenSequence<float> apply_mask(const TokenSequence<float>&,
                                         const MaskPlan&, PositionPolicy);
template TokenSequence<double> apply_mask(const TokenSequence<double>&,
                                          const MaskPlan&, PositionPolicy);

}  // namespace stseq
