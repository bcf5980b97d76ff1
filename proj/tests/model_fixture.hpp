#pragma once

#include "fd.hpp"
#include "stseq/model.hpp"

namespace stseq::testing {

inline ModelConfig small_model(std::size_t vocab = 12) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 8;
  c.vocab = vocab;
  return c;
}

// START + frames*slots random visual rows + text + END on a fresh model.
struct SmallSetup {
  Rng rng;
  TransformerParams<double> params;
  Tape<double> tape;
  TokenSequence<double> seq;

  SmallSetup(std::uint64_t seed, std::vector<int> text, std::size_t frames = 2,
             std::size_t slots = 3, bool record = true)
      : rng(seed), params(init_transformer<double>(small_model(), rng)), tape(record) {
    TokenGrid<double> grid{tape.constant(random_tensor({frames * slots, 8}, rng)), frames,
                           slots, 8};
    seq = assemble_sequence(grid, std::span<const int>(text), params.embedding);
  }
};

}  // namespace stseq::testing
