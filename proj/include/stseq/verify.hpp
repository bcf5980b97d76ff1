#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stseq {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // the quantity compared against the bound
  double bound = 0.0;
  std::string detail;
  double seconds = 0.0;
};

// Mean surviving visual-token count over `plans` dynamic-normal plans.
CheckResult check_surviving_tokens(std::uint64_t seed, std::size_t frames = 16,
                                   std::size_t slots = 32, double sigma = 0.1,
                                   std::size_t plans = 10000);
// Truncated-normal rate sampler: bounds, mean, and the sigma = 0 case.
CheckResult check_mask_rate_sampler(std::uint64_t seed, std::size_t draws = 100000);
// Partition, sortedness and per-position masking frequency of mask plans.
CheckResult check_mask_plan_uniformity(std::uint64_t seed);
// Masking keeps every non-visual row and renumbers positions.
CheckResult check_apply_mask(std::uint64_t seed);
// Empty plan, same parameters: L_mvm is exactly zero.
CheckResult check_mvm_empty_plan(std::uint64_t seed);
// Training-path L_mvm gradients vs a hand-built constants oracle (64-bit).
CheckResult check_mvm_detachment(std::uint64_t seed);
// rho = 0 with MVM on gives the gradients of the MVM-off loss.
CheckResult check_mvm_zero_rate(std::uint64_t seed);
// Zero-initialized residual MLP: adapter logits equal local-only logits.
CheckResult check_global_local_zero_init(std::uint64_t seed);
// Perturbing row p leaves logits of rows < p unchanged and moves row p.
CheckResult check_causality(std::uint64_t seed);
// Shifting every position id by a constant leaves attention scores unchanged.
CheckResult check_rope_offset(std::uint64_t seed);
// Order-invariant input: a reversal clip and its reverse give identical
// mean-pooled tokens.
CheckResult check_meanpool_order_blind(std::uint64_t seed);
// Train and test splits never share a generating state.
CheckResult check_split_disjoint(std::uint64_t seed);
CheckResult check_checkpoint_roundtrip(std::uint64_t seed);
// Two trainers on the same config produce identical metrics records.
CheckResult check_reproducible_steps(std::uint64_t seed);
CheckResult check_gradcheck(std::uint64_t seed);
CheckResult check_gradcheck_global_local(std::uint64_t seed);

// Every check above with default arguments, in order.
std::vector<CheckResult> run_invariants(
    std::uint64_t seed,
    const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace stseq
