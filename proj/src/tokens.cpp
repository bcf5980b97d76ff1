#include "stseq/tokens.hpp"

#include <cmath>
#include <string>

#include "init.hpp"

namespace stseq {

void SyntheticVideo::validate() const {
  if (frames == 0 || size == 0) {
    throw ContractError("video: needs at least one non-empty frame");
  }
  if (pixels.size() != frames * size * size) {
    throw ContractError("video: pixel buffer does not match " +
                        std::to_string(frames) + " frames of " +
                        std::to_string(size) + "x" + std::to_string(size));
  }
  for (double v : pixels) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("video: pixel value outside [0,1]");
    }
  }
}

void PatchLayout::validate() const {
  if (grid == 0 || patches_per_side == 0 || grid % patches_per_side != 0) {
    throw ConfigError("patch layout: frame size " + std::to_string(grid) +
                      " is not divisible into a " +
                      std::to_string(patches_per_side) + "x" +
                      std::to_string(patches_per_side) + " patch grid");
  }
}

template <typename T>
std::size_t TokenSequence<T>::visual_count() const {
  std::size_t n = 0;
  for (const auto& o : origins) n += o.kind == OriginKind::kVisual;
  return n;
}

template <typename T>
FrameEncoderParams<T> init_frame_encoder(const PatchLayout& layout,
                                         std::size_t dim, Rng& rng) {
  layout.validate();
  FrameEncoderParams<T> p;
  p.weight = Param<T>(detail::scaled_normal<T>({layout.patch_dim(), dim},
                                               layout.patch_dim(), rng));
  p.bias = Param<T>(Tensor<T>({dim}));
  return p;
}

template <typename T>
ProjectionParams<T> init_projection(std::size_t dim, Rng& rng) {
  ProjectionParams<T> p;
  p.weight = Param<T>(detail::scaled_normal<T>({dim, dim}, dim, rng));
  p.bias = Param<T>(Tensor<T>({dim}));
  return p;
}

template <typename T>
Tensor<T> patchify(const SyntheticVideo& video, const PatchLayout& layout) {
  layout.validate();
  video.validate();
  if (video.size != layout.grid) {
    throw ConfigError("patchify: frame size " + std::to_string(video.size) +
                      " differs from layout grid " + std::to_string(layout.grid));
  }
  const std::size_t pps = layout.patches_per_side;
  const std::size_t side = layout.patch_side();
  const std::size_t k = layout.tokens_per_frame();
  Tensor<T> out({video.frames * k, layout.patch_dim()});
  for (std::size_t t = 0; t < video.frames; ++t) {
    for (std::size_t py = 0; py < pps; ++py) {
      for (std::size_t px = 0; px < pps; ++px) {
        const std::size_t row = t * k + py * pps + px;
        T* dst = out.data.data() + row * layout.patch_dim();
        for (std::size_t y = 0; y < side; ++y)
          for (std::size_t x = 0; x < side; ++x)
            dst[y * side + x] = T(video.at(t, py * side + y, px * side + x));
      }
    }
  }
  return out;
}

template <typename T>
TokenGrid<T> encode_frames(Tape<T>& tape, const SyntheticVideo& video,
                           const PatchLayout& layout,
                           FrameEncoderParams<T>& params) {
  Tensor<T> patches = patchify<T>(video, layout);
  if (params.weight.value.shape.size() != 2 ||
      params.weight.value.shape[0] != layout.patch_dim()) {
    throw ConfigError("encode_frames: encoder expects patch dim " +
                      std::to_string(params.weight.value.shape.at(0)) +
                      ", layout gives " + std::to_string(layout.patch_dim()));
  }
  auto x = tape.constant(std::move(patches));
  auto tokens = add(matmul(x, tape.param(params.weight)), tape.param(params.bias));
  return TokenGrid<T>{tokens, video.frames, layout.tokens_per_frame(),
                      params.weight.value.shape[1]};
}

template <typename T>
TokenGrid<T> project_visual(const TokenGrid<T>& grid,
                            ProjectionParams<T>& params) {
  const auto& w = params.weight.value.shape;
  if (w.size() != 2 || w[0] != grid.dim || w[1] != grid.dim ||
      params.bias.value.size() != grid.dim) {
    throw ConfigError("project_visual: projection " + shape_to_string(w) +
                      " does not map dim " + std::to_string(grid.dim));
  }
  Tape<T>& tape = *grid.tokens.tape();
  auto out = add(matmul(grid.tokens, tape.param(params.weight)),
                 tape.param(params.bias));
  return TokenGrid<T>{out, grid.frames, grid.slots, grid.dim};
}

template <typename T>
TokenSequence<T> assemble_sequence(const TokenGrid<T>& grid,
                                   std::span<const int> text_ids,
                                   Param<T>& embedding, bool append_end) {
  if (text_ids.empty()) {
    throw ContractError("assemble_sequence: empty text");
  }
  const auto& es = embedding.value.shape;
  if (es.size() != 2 || es[1] != grid.dim) {
    throw ConfigError("assemble_sequence: embedding table " +
                      shape_to_string(es) + " vs token dim " +
                      std::to_string(grid.dim));
  }
  const std::size_t vocab = es[0];
  std::vector<std::size_t> text_rows;
  for (int id : text_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("assemble_sequence: text id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    text_rows.push_back(static_cast<std::size_t>(id));
  }
  if (append_end) text_rows.push_back(kEndId);

  Tape<T>& tape = *grid.tokens.tape();
  auto table = tape.param(embedding);
  const std::size_t start_row[] = {kStartId};
  const Var<T> parts[] = {gather_rows(table, std::span(start_row)), grid.tokens,
                          gather_rows(table, std::span(text_rows))};

  TokenSequence<T> seq;
  seq.embeddings = concat_rows(std::span<const Var<T>>(parts));
  seq.frames = grid.frames;
  seq.slots = grid.slots;
  seq.text_ids.assign(text_ids.begin(), text_ids.end());
  seq.origins.reserve(seq.embeddings.rows());
  seq.origins.push_back(OriginTag::start());
  for (std::size_t i = 0; i < grid.frames; ++i)
    for (std::size_t j = 0; j < grid.slots; ++j)
      seq.origins.push_back(OriginTag::visual(int(i), int(j)));
  for (std::size_t n = 0; n < text_ids.size(); ++n)
    seq.origins.push_back(OriginTag::text_at(int(n)));
  if (append_end) seq.origins.push_back(OriginTag::end());
  seq.position_ids.resize(seq.origins.size());
  for (std::size_t p = 0; p < seq.position_ids.size(); ++p)
    seq.position_ids[p] = std::int64_t(p);
  return seq;
}

#define STSEQ_INSTANTIATE(T)                                                  \
  template struct TokenSequence<T>;                                           \
  template FrameEncoderParams<T> init_frame_encoder(const PatchLayout&,       \
                                                    std::size_t, Rng&);       \
  template ProjectionParams<T> init_projection(std::size_t, Rng&);            \
  template Tensor<T> patchify(const SyntheticVideo&, const PatchLayout&);     \
  template TokenGrid<T> encode_frames(Tape<T>&, const SyntheticVideo&,        \
                                      const PatchLayout&,                     \
                                      FrameEncoderParams<T>&);                \
  template TokenGrid<T> project_visual(const TokenGrid<T>&,                   \
                                       ProjectionParams<T>&);                 \
  template TokenSequence<T> assemble_sequence(                                \
      const TokenGrid<T>&, std::span<const int>, Param<T>&, bool);

STSEQ_INSTANTIATE(float)
STSEQ_INSTANTIATE(double)

#undef STSEQ_INSTANTIATE

}  // namespace stseq
