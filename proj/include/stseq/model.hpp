#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stseq/numerics.hpp"
#include "stseq/random.hpp"
#include "stseq/tokens.hpp"

namespace stseq {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t vocab = 64;
  std::size_t ffn_mult = 4;
  double rope_base = 10000.0;

  std::size_t head_dim() const { return dim / heads; }
  void validate() const;
};

template <typename T>
struct LayerParams {
  Param<T> attn_norm;  // [D]
  Param<T> wq, wk, wv, wo;  // [D, D]
  Param<T> ffn_norm;   // [D]
  Param<T> w1;         // [D, ffn_mult * D]
  Param<T> b1;
  Param<T> w2;         // [ffn_mult * D, D]
  Param<T> b2;
};

// Decoder-only transformer. The embedding table doubles as the output
// projection.
template <typename T>
struct TransformerParams {
  ModelConfig config;
  Param<T> embedding;  // [vocab, D]
  std::vector<LayerParams<T>> layers;
  Param<T> final_norm;

  template <typename F>
  void visit(F&& f) {
    f("lm.embedding", embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "lm.layer" + std::to_string(l) + ".";
      auto& L = layers[l];
      f(p + "attn_norm", L.attn_norm);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ffn_norm", L.ffn_norm);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("lm.final_norm", final_norm);
  }
};

template <typename T>
TransformerParams<T> init_transformer(const ModelConfig& config, Rng& rng);

enum class ForwardMode {
  kTrain,
  // Runs on a private non-recording tape; the outputs land on the caller's
  // tape as constants and carry no gradient.
  kReference,
};

struct ForwardOptions {
  ForwardMode mode = ForwardMode::kTrain;
  // Keep the pre-softmax (scaled) attention scores of every layer and head.
  bool capture_attention = false;
};

template <typename T>
struct ModelOutput {
  Var<T> hidden;  // [L, D] after the final norm
  Var<T> logits;  // [L, vocab]
  // layer-major, then head: [L, L] each, when captured.
  std::vector<Tensor<T>> attention_scores;
};

template <typename T>
ModelOutput<T> forward(const TokenSequence<T>& seq, TransformerParams<T>& params,
                       const ForwardOptions& options = {});

// Next-token cross-entropy over the answer tokens only: text entries with
// index >= prompt_length. Position p's token is predicted from row p - 1.
template <typename T>
Var<T> decoder_loss(const ModelOutput<T>& out, const TokenSequence<T>& seq,
                    std::size_t prompt_length);

}  // namespace stseq
