#include "stseq/objectives.hpp"

#include <cmath>
#include <map>

namespace stseq {

namespace {

// flat visual index -> row, for every VISUAL origin of the sequence.
template <typename T>
std::map<std::size_t, std::size_t> visual_rows(const TokenSequence<T>& seq) {
  std::map<std::size_t, std::size_t> rows;
  for (std::size_t p = 0; p < seq.length(); ++p) {
    const auto& tag = seq.origins[p];
    if (tag.kind != OriginKind::kVisual) continue;
    rows.emplace(std::size_t(tag.frame) * seq.slots + std::size_t(tag.slot), p);
  }
  return rows;
}

}  // namespace

template <typename T>
PairSelection select_pairs(const TokenSequence<T>& masked,
                           const TokenSequence<T>& full, const MaskPlan& plan) {
  if (masked.frames != full.frames || masked.slots != full.slots ||
      full.frames != plan.frames || full.slots != plan.slots) {
    throw ContractError("select_pairs: sequences and plan disagree on grid size");
  }
  const auto masked_rows = visual_rows(masked);
  const auto full_rows = visual_rows(full);
  if (full_rows.size() != plan.total()) {
    throw ContractError("select_pairs: reference sequence is missing visual tokens");
  }
  if (masked_rows.size() != plan.kept.size()) {
    throw ContractError("select_pairs: masked run carries " +
                        std::to_string(masked_rows.size()) +
                        " visual tokens, plan keeps " +
                        std::to_string(plan.kept.size()));
  }
  PairSelection sel;
  sel.pairs.reserve(plan.kept.size());
  for (auto flat : plan.kept) {
    auto m = masked_rows.find(flat);
    auto f = full_rows.find(flat);
    if (m == masked_rows.end() || f == full_rows.end() ||
        !(masked.origins[m->second] == full.origins[f->second])) {
      throw ContractError("select_pairs: origin tag mismatch at visual index " +
                          std::to_string(flat));
    }
    sel.pairs.emplace_back(m->second, f->second);
  }
  return sel;
}

template <typename T>
MvmLoss<T> mvm_loss(const ModelOutput<T>& masked_out,
                    const ModelOutput<T>& reference_out,
                    const PairSelection& selection, MvmTarget target) {
  const Var<T>& live = target == MvmTarget::kHidden ? masked_out.hidden
                                                    : masked_out.logits;
  const Var<T>& ref = target == MvmTarget::kHidden ? reference_out.hidden
                                                   : reference_out.logits;
  if (ref.requires_grad()) {
    throw ContractError("mvm_loss: reference output must carry no gradient");
  }
  Tape<T>& tape = *live.tape();
  if (selection.empty()) {
    return MvmLoss<T>{tape.constant(Tensor<T>({1})), true};
  }
  std::vector<std::size_t> live_rows, ref_rows;
  live_rows.reserve(selection.size());
  ref_rows.reserve(selection.size());
  for (auto [m, r] : selection.pairs) {
    live_rows.push_back(m);
    ref_rows.push_back(r);
  }
  const auto& rv = ref.value();
  const std::size_t d = rv.cols();
  if (live.cols() != d) {
    throw DimensionError("mvm_loss: feature width " + std::to_string(live.cols()) +
                         " vs reference " + std::to_string(d));
  }
  Tensor<T> target_rows({ref_rows.size(), d});
  for (std::size_t k = 0; k < ref_rows.size(); ++k) {
    if (ref_rows[k] >= rv.rows()) throw IndexError("mvm_loss: reference row out of range");
    for (std::size_t j = 0; j < d; ++j) target_rows.at(k, j) = rv.at(ref_rows[k], j);
  }
  auto picked = gather_rows(live, std::span<const std::size_t>(live_rows));
  return MvmLoss<T>{mse_pairs(picked, target_rows), false};
}

template <typename T>
Var<T> total_loss(const Var<T>& l_mvm, const Var<T>& l_llm,
                  const LossWeights& weights) {
  if (l_mvm.size() != 1 || l_llm.size() != 1) {
    throw ContractError("total_loss: both terms must be scalars");
  }
  if (!std::isfinite(l_mvm.value()[0])) {
    throw NumericError("total_loss: l_mvm is not finite");
  }
  if (!std::isfinite(l_llm.value()[0])) {
    throw NumericError("total_loss: l_llm is not finite");
  }
  auto a = weights.mvm == 1.0 ? l_mvm : scale(l_mvm, T(weights.mvm));
  auto b = weights.llm == 1.0 ? l_llm : scale(l_llm, T(weights.llm));
  return add(a, b);
}

#define STSEQ_INSTANTIATE(T)                                                   \
  template PairSelection select_pairs(const TokenSequence<T>&,                 \
                                      const TokenSequence<T>&, const MaskPlan&); \
  template MvmLoss<T> mvm_loss(const ModelOutput<T>&, const ModelOutput<T>&,   \
                               const PairSelection&, MvmTarget);               \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, const LossWeights&);

STSEQ_INSTANTIATE(float)
STSEQ_INSTANTIATE(double)

#undef STSEQ_INSTANTIATE

}  // namespace stseq
