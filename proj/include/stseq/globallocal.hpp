#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stseq/numerics.hpp"
#include "stseq/random.hpp"
#include "stseq/tokens.hpp"

namespace stseq {

// Per-token two-layer MLP D -> width * D -> out_frames * D. The second layer
// starts at zero so the residual it produces is exactly zero at init.
// out_frames == 1 gives one residual per token slot, tiled over all local
// frames; out_frames == T_local gives a distinct residual per local frame.
template <typename T>
struct ResidualProjectorParams {
  Param<T> w1;  // [D, width * D]
  Param<T> b1;
  Param<T> w2;  // [width * D, out_frames * D]
  Param<T> b2;
  std::size_t out_frames = 1;
};

template <typename T>
ResidualProjectorParams<T> init_residual_projector(std::size_t dim,
                                                   std::size_t width_mult,
                                                   std::size_t out_frames,
                                                   Rng& rng);

// v0_j = (1/T) sum_i v_(i,j) -> [K, D].
template <typename T>
Var<T> global_pool(const TokenGrid<T>& grid);

// Frame indices floor((k + 0.5) * T / T_local), k = 0..T_local-1.
std::vector<std::size_t> local_frame_indices(std::size_t frames,
                                             std::size_t local_frames);

template <typename T>
TokenGrid<T> sample_local(const TokenGrid<T>& grid, std::size_t local_frames);

// f_m(global) as a [K, out_frames * D] array.
template <typename T>
Var<T> residual_projection(const Var<T>& global,
                           ResidualProjectorParams<T>& params);

// output(i, j) = local(i, j) + f_m(global)(j), or the frame-specific slice of
// f_m(global) when the projector emits one residual per local frame.
template <typename T>
TokenGrid<T> fuse_global_local(const TokenGrid<T>& local, const Var<T>& global,
                               ResidualProjectorParams<T>& params);

enum class GlobalLocalVariant {
  kGlobalOnly,       // the pooled K tokens alone
  kLocalOnly,        // sub-sampled frames alone
  kSimpleAdd,        // local + pooled tokens, no projector
  kAdapter,          // local + f_m(pooled), residual tiled over frames
  kAdapterPerFrame,  // local + f_m(pooled), one residual per local frame
};

std::string to_string(GlobalLocalVariant v);
GlobalLocalVariant parse_global_local_variant(const std::string& name);

// Builds the visual grid fed to the sequence model from all encoded frames.
template <typename T>
TokenGrid<T> build_global_local(const TokenGrid<T>& all_frames,
                                std::size_t local_frames,
                                GlobalLocalVariant variant,
                                ResidualProjectorParams<T>& params);

}  // namespace stseq
