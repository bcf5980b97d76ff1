#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "stseq/masking.hpp"
#include "stseq/model.hpp"

namespace stseq {

// (row in the masked run, row in the reference run) for every surviving
// visual token, matched by origin tag and ordered by flat visual index.
struct PairSelection {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

template <typename T>
PairSelection select_pairs(const TokenSequence<T>& masked,
                           const TokenSequence<T>& full, const MaskPlan& plan);

// Which representation of each paired token enters the loss.
enum class MvmTarget { kHidden, kLogits };

template <typename T>
struct MvmLoss {
  Var<T> value;            // scalar
  bool degenerate = false; // no pairs; value is a constant 0
};

// Mean over pairs and feature dims of (masked - reference)^2. The reference
// output must come from a reference-mode forward; gradient reaches the masked
// run only.
template <typename T>
MvmLoss<T> mvm_loss(const ModelOutput<T>& masked_out,
                    const ModelOutput<T>& reference_out,
                    const PairSelection& selection,
                    MvmTarget target = MvmTarget::kHidden);

struct LossWeights {
  double mvm = 1.0;
  double llm = 1.0;
};

// mvm_weight * l_mvm + llm_weight * l_llm. Throws NumericError naming the
// offending term when either input is non-finite.
template <typename T>
Var<T> total_loss(const Var<T>& l_mvm, const Var<T>& l_llm,
                  const LossWeights& weights = {});

}  // namespace stseq
