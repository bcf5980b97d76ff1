#include "stseq/model.hpp"

#include <cmath>

#include "init.hpp"

namespace stseq {

void ModelConfig::validate() const {
  if (layers == 0 || heads == 0 || dim == 0 || vocab == 0 || ffn_mult == 0) {
    throw ConfigError("model: every count must be at least 1");
  }
  if (dim % heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("model: rotary embedding needs an even head dim");
  }
  if (!(rope_base > 1.0)) throw ConfigError("model: rope_base must exceed 1");
}

template <typename T>
TransformerParams<T> init_transformer(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim, f = config.dim * config.ffn_mult;
  TransformerParams<T> p;
  p.config = config;
  p.embedding = Param<T>(detail::scaled_normal<T>({config.vocab, d}, d, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams<T> L;
    L.attn_norm = Param<T>(Tensor<T>::full({d}, T(1)));
    L.wq = Param<T>(detail::scaled_normal<T>({d, d}, d, rng));
    L.wk = Param<T>(detail::scaled_normal<T>({d, d}, d, rng));
    L.wv = Param<T>(detail::scaled_normal<T>({d, d}, d, rng));
    // Residual branches start small so the stack begins near identity.
    L.wo = Param<T>(detail::scaled_normal<T>({d, d}, d * 2 * config.layers, rng));
    L.ffn_norm = Param<T>(Tensor<T>::full({d}, T(1)));
    L.w1 = Param<T>(detail::scaled_normal<T>({d, f}, d, rng));
    L.b1 = Param<T>(Tensor<T>({f}));
    L.w2 = Param<T>(detail::scaled_normal<T>({f, d}, f * 2 * config.layers, rng));
    L.b2 = Param<T>(Tensor<T>({d}));
    p.layers.push_back(std::move(L));
  }
  p.final_norm = Param<T>(Tensor<T>::full({d}, T(1)));
  return p;
}

namespace {

template <typename T>
ModelOutput<T> run_stack(Tape<T>& tape, const Var<T>& input,
                         std::span<const std::int64_t> positions,
                         TransformerParams<T>& params, bool capture) {
  const ModelConfig& cfg = params.config;
  const std::size_t hd = cfg.head_dim();
  const T inv_scale = T(1) / std::sqrt(T(hd));
  ModelOutput<T> out;
  Var<T> x = input;
  for (auto& L : params.layers) {
    auto h = rmsnorm(x, tape.param(L.attn_norm));
    auto q = matmul(h, tape.param(L.wq));
    auto k = matmul(h, tape.param(L.wk));
    auto v = matmul(h, tape.param(L.wv));
    std::vector<Var<T>> heads;
    heads.reserve(cfg.heads);
    for (std::size_t i = 0; i < cfg.heads; ++i) {
      auto qh = rope(slice_cols(q, i * hd, hd), positions, cfg.rope_base);
      auto kh = rope(slice_cols(k, i * hd, hd), positions, cfg.rope_base);
      auto vh = slice_cols(v, i * hd, hd);
      auto scores = scale(matmul(qh, transpose(kh)), inv_scale);
      if (capture) out.attention_scores.push_back(scores.value());
      heads.push_back(matmul(softmax_lastdim(scores, /*causal=*/true), vh));
    }
    auto attn = heads.size() == 1 ? heads[0] : concat_cols(std::span<const Var<T>>(heads));
    x = add(x, matmul(attn, tape.param(L.wo)));
    auto g = rmsnorm(x, tape.param(L.ffn_norm));
    auto ff = gelu(add(matmul(g, tape.param(L.w1)), tape.param(L.b1)));
    x = add(x, add(matmul(ff, tape.param(L.w2)), tape.param(L.b2)));
  }
  out.hidden = rmsnorm(x, tape.param(params.final_norm));
  out.logits = matmul(out.hidden, transpose(tape.param(params.embedding)));
  return out;
}

}  // namespace

template <typename T>
ModelOutput<T> forward(const TokenSequence<T>& seq, TransformerParams<T>& params,
                       const ForwardOptions& options) {
  const auto& es = seq.embeddings.shape();
  if (es.size() != 2 || es[1] != params.config.dim) {
    throw ConfigError("forward: input embeddings " + shape_to_string(es) +
                      " do not match model dim " +
                      std::to_string(params.config.dim));
  }
  if (seq.position_ids.size() != es[0] || seq.origins.size() != es[0]) {
    throw ContractError("forward: sequence metadata length differs from embeddings");
  }
  Tape<T>& tape = *seq.embeddings.tape();
  if (options.mode == ForwardMode::kTrain) {
    return run_stack(tape, seq.embeddings, seq.position_ids, params,
                     options.capture_attention);
  }
  Tape<T> scratch(/*record=*/false);
  auto input = scratch.constant(seq.embeddings.value());
  auto inner = run_stack(scratch, input, seq.position_ids, params,
                         options.capture_attention);
  ModelOutput<T> out;
  out.hidden = tape.constant(inner.hidden.value());
  out.logits = tape.constant(inner.logits.value());
  out.attention_scores = std::move(inner.attention_scores);
  return out;
}

template <typename T>
Var<T> decoder_loss(const ModelOutput<T>& out, const TokenSequence<T>& seq,
                    std::size_t prompt_length) {
  const std::size_t len = seq.length();
  std::vector<int> targets(len, -1);
  std::vector<bool> ignore(len, true);
  std::size_t answers = 0;
  for (std::size_t p = 1; p < len; ++p) {
    const auto& tag = seq.origins[p];
    if (tag.kind != OriginKind::kText ||
        static_cast<std::size_t>(tag.text) < prompt_length) {
      continue;
    }
    targets[p - 1] = seq.text_ids.at(std::size_t(tag.text));
    ignore[p - 1] = false;
    ++answers;
  }
  if (answers == 0) {
    throw ContractError("decoder_loss: empty answer span");
  }
  return cross_entropy(out.logits, std::span<const int>(targets), ignore);
}

#define STSEQ_INSTANTIATE(T)                                                   \
  template TransformerParams<T> init_transformer(const ModelConfig&, Rng&);    \
  template ModelOutput<T> forward(const TokenSequence<T>&,                     \
                                  TransformerParams<T>&, const ForwardOptions&); \
  template Var<T> decoder_loss(const ModelOutput<T>&, const TokenSequence<T>&, \
                               std::size_t);

STSEQ_INSTANTIATE(float)
STSEQ_INSTANTIATE(double)

#undef STSEQ_INSTANTIATE

}  // namespace stseq
