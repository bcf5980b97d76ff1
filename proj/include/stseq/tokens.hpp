#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stseq/numerics.hpp"
#include "stseq/random.hpp"

namespace stseq {

// T grayscale G x G frames, row-major, values in [0, 1].
struct SyntheticVideo {
  std::size_t frames = 0;
  std::size_t size = 0;
  std::vector<double> pixels;

  SyntheticVideo() = default;
  SyntheticVideo(std::size_t t, std::size_t g)
      : frames(t), size(g), pixels(t * g * g, 0.0) {}

  double& at(std::size_t t, std::size_t y, std::size_t x) {
    return pixels[(t * size + y) * size + x];
  }
  double at(std::size_t t, std::size_t y, std::size_t x) const {
    return pixels[(t * size + y) * size + x];
  }
  std::span<const double> frame(std::size_t t) const {
    return {pixels.data() + t * size * size, size * size};
  }

  // Throws ContractError on an empty video or out-of-range pixels.
  void validate() const;
};

// Frame split into a patches_per_side x patches_per_side grid of square
// patches; K = patches_per_side^2 tokens per frame.
struct PatchLayout {
  std::size_t grid = 16;
  std::size_t patches_per_side = 2;

  std::size_t tokens_per_frame() const { return patches_per_side * patches_per_side; }
  std::size_t patch_side() const { return grid / patches_per_side; }
  std::size_t patch_dim() const { return patch_side() * patch_side(); }
  void validate() const;
};

template <typename T>
struct FrameEncoderParams {
  Param<T> weight;  // [patch_dim, D]
  Param<T> bias;    // [D]
};

// The visual projection: a D -> D affine map applied per token.
template <typename T>
struct ProjectionParams {
  Param<T> weight;  // [D, D]
  Param<T> bias;    // [D]
};

template <typename T>
FrameEncoderParams<T> init_frame_encoder(const PatchLayout& layout,
                                         std::size_t dim, Rng& rng);
template <typename T>
ProjectionParams<T> init_projection(std::size_t dim, Rng& rng);

// Visual tokens of one video, frame-major: row i * slots + j is token (i, j).
template <typename T>
struct TokenGrid {
  Var<T> tokens;  // [frames * slots, dim]
  std::size_t frames = 0;
  std::size_t slots = 0;
  std::size_t dim = 0;
};

enum class OriginKind : std::uint8_t { kStart, kVisual, kText, kEnd };

struct OriginTag {
  OriginKind kind = OriginKind::kStart;
  int frame = -1;
  int slot = -1;
  int text = -1;

  static OriginTag start() { return {OriginKind::kStart, -1, -1, -1}; }
  static OriginTag end() { return {OriginKind::kEnd, -1, -1, -1}; }
  static OriginTag visual(int f, int s) { return {OriginKind::kVisual, f, s, -1}; }
  static OriginTag text_at(int n) { return {OriginKind::kText, -1, -1, n}; }

  friend bool operator==(const OriginTag&, const OriginTag&) = default;
};

// Model input: START, visual tokens, text tokens, END. No separators.
template <typename T>
struct TokenSequence {
  Var<T> embeddings;  // [L, D]
  std::vector<std::int64_t> position_ids;
  std::vector<OriginTag> origins;
  std::vector<int> text_ids;
  std::size_t frames = 0;  // grid the visual tokens came from
  std::size_t slots = 0;

  std::size_t length() const { return origins.size(); }
  std::size_t visual_count() const;
};

// Patches of every frame flattened row-major: [T * K, patch_dim].
template <typename T>
Tensor<T> patchify(const SyntheticVideo& video, const PatchLayout& layout);

template <typename T>
TokenGrid<T> encode_frames(Tape<T>& tape, const SyntheticVideo& video,
                           const PatchLayout& layout,
                           FrameEncoderParams<T>& params);

template <typename T>
TokenGrid<T> project_visual(const TokenGrid<T>& grid,
                            ProjectionParams<T>& params);

// Visual tokens enter as embeddings directly; text ids go through the
// embedding table, whose rows 0 and 1 are START and END. With
// `append_end == false` the sequence stops after the last text token, which
// is the layout used while decoding.
template <typename T>
TokenSequence<T> assemble_sequence(const TokenGrid<T>& grid,
                                   std::span<const int> text_ids,
                                   Param<T>& embedding, bool append_end = true);

inline constexpr int kStartId = 0;
inline constexpr int kEndId = 1;

}  // namespace stseq
