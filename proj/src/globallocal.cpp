#include "stseq/globallocal.hpp"

#include "init.hpp"

namespace stseq {

template <typename T>
ResidualProjectorParams<T> init_residual_projector(std::size_t dim,
                                                   std::size_t width_mult,
                                                   std::size_t out_frames,
                                                   Rng& rng) {
  if (dim == 0 || width_mult == 0 || out_frames == 0) {
    throw ConfigError("residual projector: sizes must be positive");
  }
  const std::size_t hidden = dim * width_mult;
  ResidualProjectorParams<T> p;
  p.w1 = Param<T>(detail::scaled_normal<T>({dim, hidden}, dim, rng));
  p.b1 = Param<T>(Tensor<T>({hidden}));
  p.w2 = Param<T>(Tensor<T>({hidden, out_frames * dim}));
  p.b2 = Param<T>(Tensor<T>({out_frames * dim}));
  p.out_frames = out_frames;
  return p;
}

template <typename T>
Var<T> global_pool(const TokenGrid<T>& grid) {
  if (grid.frames == 0) throw ContractError("global_pool: no frames");
  return frame_mean(grid.tokens, grid.frames);
}

std::vector<std::size_t> local_frame_indices(std::size_t frames,
                                             std::size_t local_frames) {
  if (local_frames == 0 || local_frames > frames) {
    throw ConfigError("sample_local: cannot take " + std::to_string(local_frames) +
                      " of " + std::to_string(frames) + " frames");
  }
  // floor((k + 0.5) * T / T_local) in integer arithmetic.
  std::vector<std::size_t> idx(local_frames);
  for (std::size_t k = 0; k < local_frames; ++k)
    idx[k] = ((2 * k + 1) * frames) / (2 * local_frames);
  return idx;
}

template <typename T>
TokenGrid<T> sample_local(const TokenGrid<T>& grid, std::size_t local_frames) {
  const auto frames = local_frame_indices(grid.frames, local_frames);
  if (local_frames == grid.frames) return grid;
  std::vector<std::size_t> rows;
  rows.reserve(local_frames * grid.slots);
  for (auto f : frames)
    for (std::size_t j = 0; j < grid.slots; ++j) rows.push_back(f * grid.slots + j);
  return TokenGrid<T>{gather_rows(grid.tokens, std::span<const std::size_t>(rows)),
                      local_frames, grid.slots, grid.dim};
}

template <typename T>
Var<T> residual_projection(const Var<T>& global,
                           ResidualProjectorParams<T>& params) {
  Tape<T>& tape = *global.tape();
  auto h = gelu(add(matmul(global, tape.param(params.w1)), tape.param(params.b1)));
  return add(matmul(h, tape.param(params.w2)), tape.param(params.b2));
}

template <typename T>
TokenGrid<T> fuse_global_local(const TokenGrid<T>& local, const Var<T>& global,
                               ResidualProjectorParams<T>& params) {
  if (global.shape().size() != 2 || global.shape()[0] != local.slots ||
      global.shape()[1] != local.dim) {
    throw ContractError("fuse_global_local: global " +
                        shape_to_string(global.shape()) + " vs local grid of " +
                        std::to_string(local.slots) + " slots x " +
                        std::to_string(local.dim));
  }
  if (params.w1.value.shape.at(0) != local.dim) {
    throw ContractError("fuse_global_local: projector input width differs from dim");
  }
  auto r = residual_projection(global, params);
  Var<T> residual;
  if (params.out_frames == 1) {
    residual = tile_rows(r, local.frames);
  } else {
    if (params.out_frames != local.frames) {
      throw ContractError("fuse_global_local: projector emits " +
                          std::to_string(params.out_frames) +
                          " frame residuals for " + std::to_string(local.frames) +
                          " local frames");
    }
    std::vector<Var<T>> per_frame;
    per_frame.reserve(local.frames);
    for (std::size_t i = 0; i < local.frames; ++i)
      per_frame.push_back(slice_cols(r, i * local.dim, local.dim));
    residual = concat_rows(std::span<const Var<T>>(per_frame));
  }
  return TokenGrid<T>{add(local.tokens, residual), local.frames, local.slots,
                      local.dim};
}

std::string to_string(GlobalLocalVariant v) {
  switch (v) {
    case GlobalLocalVariant::kGlobalOnly: return "global-only";
    case GlobalLocalVariant::kLocalOnly: return "local-only";
    case GlobalLocalVariant::kSimpleAdd: return "simple-add";
    case GlobalLocalVariant::kAdapter: return "adapter";
    case GlobalLocalVariant::kAdapterPerFrame: return "adapter-per-frame";
  }
  return "adapter";
}

GlobalLocalVariant parse_global_local_variant(const std::string& name) {
  if (name == "global-only") return GlobalLocalVariant::kGlobalOnly;
  if (name == "local-only") return GlobalLocalVariant::kLocalOnly;
  if (name == "simple-add" || name == "simply-add") return GlobalLocalVariant::kSimpleAdd;
  if (name == "adapter") return GlobalLocalVariant::kAdapter;
  if (name == "adapter-per-frame") return GlobalLocalVariant::kAdapterPerFrame;
  throw ConfigError("unknown global-local variant '" + name + "'");
}

template <typename T>
TokenGrid<T> build_global_local(const TokenGrid<T>& all_frames,
                                std::size_t local_frames,
                                GlobalLocalVariant variant,
                                ResidualProjectorParams<T>& params) {
  switch (variant) {
    case GlobalLocalVariant::kGlobalOnly:
      return TokenGrid<T>{global_pool(all_frames), 1, all_frames.slots,
                          all_frames.dim};
    case GlobalLocalVariant::kLocalOnly:
      return sample_local(all_frames, local_frames);
    case GlobalLocalVariant::kSimpleAdd: {
      auto local = sample_local(all_frames, local_frames);
      auto pooled = tile_rows(global_pool(all_frames), local.frames);
      return TokenGrid<T>{add(local.tokens, pooled), local.frames, local.slots,
                          local.dim};
    }
    case GlobalLocalVariant::kAdapter:
    case GlobalLocalVariant::kAdapterPerFrame: {
      auto local = sample_local(all_frames, local_frames);
      return fuse_global_local(local, global_pool(all_frames), params);
    }
  }
  throw ContractError("build_global_local: unknown variant");
}

#define STSEQ_INSTANTIATE(T)                                                   \
  template ResidualProjectorParams<T> init_residual_projector(                 \
      std::size_t, std::size_t, std::size_t, Rng&);                            \
  template Var<T> global_pool(const TokenGrid<T>&);                            \
  template TokenGrid<T> sample_local(const TokenGrid<T>&, std::size_t);        \
  template Var<T> residual_projection(const Var<T>&,                           \
                                     ResidualProjectorParams<T>&);             \
  template TokenGrid<T> fuse_global_local(const TokenGrid<T>&, const Var<T>&,  \
                                          ResidualProjectorParams<T>&);        \
  template TokenGrid<T> build_global_local(const TokenGrid<T>&, std::size_t,   \
                                           GlobalLocalVariant,                 \
                                           ResidualProjectorParams<T>&);

STSEQ_INSTANTIATE(float)
STSEQ_INSTANTIATE(double)

#undef STSEQ_INSTANTIATE

}  // namespace stseq
