#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stseq/random.hpp"
#include "stseq/tokens.hpp"

namespace stseq {

// Truncation window and centre of the dynamic mask-rate distribution.
struct MaskRateBounds {
  double mean = 0.5;
  double low = 0.3;
  double high = 0.7;
};

// rho ~ Normal(mean, sigma) restricted to [low, high] by rejection. sigma is a
// standard deviation; sigma == 0 returns `mean` exactly.
double sample_mask_rate(double sigma, Rng& rng, const MaskRateBounds& bounds = {});

// round-half-even(rho * total), clamped so that at least one visual token
// survives.
std::size_t masked_count(std::size_t total, double rho);

struct MaskPlan {
  double rho = 0.0;
  std::size_t frames = 0;
  std::size_t slots = 0;
  std::vector<std::size_t> masked;  // ascending flat indices i * slots + j
  std::vector<std::size_t> kept;    // ascending complement

  std::size_t total() const { return frames * slots; }
};

// Masked positions drawn uniformly without replacement over all T*K visual
// tokens, ignoring frame boundaries.
MaskPlan build_mask_plan(std::size_t frames, std::size_t slots, double rho,
                         Rng& rng);

enum class PositionPolicy {
  kRenumber,  // surviving tokens get 0..L'-1
  kKeep,      // surviving tokens keep their pre-mask position ids
};

// Removes masked visual tokens. Text, START and END rows and every origin tag
// survive untouched.
template <typename T>
TokenSequence<T> apply_mask(const TokenSequence<T>& seq, const MaskPlan& plan,
                            PositionPolicy policy = PositionPolicy::kRenumber);

enum class MaskMode { kOff, kStatic, kDynamicNormal, kDynamicUniform };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

// Per-sample mask-rate source selected by the run configuration.
struct MaskSchedule {
  MaskMode mode = MaskMode::kOff;
  double rho = 0.5;      // kStatic
  double sigma = 0.1;    // kDynamicNormal
  MaskRateBounds bounds; // kDynamicNormal window, kDynamicUniform range

  bool enabled() const { return mode != MaskMode::kOff; }
  void validate() const;
  double sample(Rng& rng) const;
};

}  // namespace stseq
