#pragma once

// Minimal reverse-mode differentiation over dense row-major arrays.
//
// A Tape owns every intermediate value produced while it is alive; Var is a
// lightweight handle (tape pointer + node id) into it. Parameters live outside
// the tape in Param<T> and are bound once per tape through Tape::param(); the
// gradient of a backward pass is accumulated into Param::grad.
//
// Broadcasting for binary ops is limited to two forms: an operand with a
// single element (scalar vs. array), and a rank-1 operand whose length equals
// the trailing dimension of the other (row vector added to every row). The
// broadcast operand is always the second argument.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stseq/error.hpp"

namespace stseq {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}
  Tensor(Shape s, std::vector<T> values);

  static Tensor full(Shape s, T value);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  // Trailing dimension; 1 for scalars.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  // Product of all leading dimensions.
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool all_finite() const;
};

// Trainable array with its gradient accumulator.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Tensor<T> v) : value(std::move(v)), grad(value.shape) {}

  void zero_grad();
};

enum class OpKind : std::uint8_t {
  kConstant,
  kLeaf,
  kParam,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kGelu,
  kSoftmax,
  kRmsNorm,
  kCrossEntropy,
  kMse,
  kSum,
  kMean,
  kGatherRows,
  kConcatRows,
  kSliceCols,
  kConcatCols,
  kRope,
  kFrameMean,
  kTileRows,
  kReshape,
};

const char* op_name(OpKind kind);

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is being
  // propagated to its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Record {
    OpKind kind;
    std::vector<std::size_t> inputs;
  };

  // A non-recording tape computes identical values but keeps no backward
  // closures; everything it produces is constant.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  // Differentiable input that is not a Param; its gradient stays on the tape.
  Var<T> leaf(Tensor<T> value);
  // Bound at most once per tape; repeated calls return the same node.
  Var<T> param(Param<T>& p);

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse.
  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // nullptr when no gradient reached the node.
  const Tensor<T>* grad(const Var<T>& v) const;
  Record record(std::size_t id) const;

  // Op construction. The result requires grad iff recording and any input
  // does; `fn` is dropped otherwise.
  Var<T> emit(OpKind kind, Tensor<T> value, std::vector<std::size_t> inputs,
              BackwardFn fn);
  // Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad_buffer(std::size_t id);
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    OpKind kind;
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, std::size_t> param_nodes_;
};

// ---- operations ----------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);

enum class Elementwise { kAdd, kSub, kMul, kGelu, kScale };

// Single entry point over the elementwise family. `b` is required for the
// binary kinds and ignored otherwise; `factor` is used by kScale only.
template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>* b = nullptr,
                   T factor = T(1));

// Max-subtracted softmax over the trailing dimension. With `causal`, the
// input must be square and entry (r, c) with c > r is excluded (output 0).
template <typename T>
Var<T> softmax_lastdim(const Var<T>& a, bool causal = false);

inline constexpr double kRmsNormEpsilon = 1e-5;

template <typename T>
Var<T> rmsnorm(const Var<T>& a, const Var<T>& gain);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
// over rows with ignore[r] == false. Ignored rows may carry any target.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets,
                     const std::vector<bool>& ignore);

// Mean over all elements of (a - b)^2. `b` is a plain array and receives no
// gradient.
template <typename T>
Var<T> mse_pairs(const Var<T>& a, const Tensor<T>& b);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> rows);
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t width);
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);

// Rotates consecutive column pairs (2m, 2m+1) of row r by angle
// positions[r] * base^(-2m / cols). Columns must be even.
template <typename T>
Var<T> rope(const Var<T>& a, std::span<const std::int64_t> positions,
            double base);

// a: [groups * slots, d] laid out group-major -> [slots, d], the mean over
// groups. Each output element sums its inputs in sorted order, so the result
// is bit-identical under any permutation of the groups.
template <typename T>
Var<T> frame_mean(const Var<T>& a, std::size_t groups);

// [k, d] -> [times * k, d], the block repeated.
template <typename T>
Var<T> tile_rows(const Var<T>& a, std::size_t times);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);

// Copy of the value as a constant on the same tape.
template <typename T>
Var<T> detach(const Var<T>& a);

}  // namespace stseq
