#include "stseq/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace stseq {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape s, T value) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void Param<T>::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
  std::fill(grad.data.begin(), grad.data.end(), T(0));
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kParam: return "param";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kRmsNorm: return "rmsnorm";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kMse: return "mse";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kRope: return "rope";
    case OpKind::kFrameMean: return "frame_mean";
    case OpKind::kTileRows: return "tile_rows";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

// ---- Var / Tape ----------------------------------------------------------

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, false, false,
                        {}, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  nodes_.push_back(
      Node{OpKind::kLeaf, std::move(value), {}, false, record_, {}, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Param<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var<T>(this, it->second);
  }
  BackwardFn fn;
  if (record_) {
    Param<T>* target = &p;
    fn = [target](Tape& tape, std::size_t self) {
      const auto& g = tape.out_grad(self);
      if (target->grad.shape != target->value.shape) target->zero_grad();
      for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += g[i];
    };
  }
  nodes_.push_back(
      Node{OpKind::kParam, p.value, {}, false, record_, {}, std::move(fn)});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::emit(OpKind kind, Tensor<T> value,
                     std::vector<std::size_t> inputs, BackwardFn fn) {
  bool rg = false;
  if (record_) {
    for (auto id : inputs) rg = rg || nodes_[id].requires_grad;
  }
  if (!rg) fn = nullptr;
  nodes_.push_back(Node{kind, std::move(value), {}, false, rg,
                        std::move(inputs), std::move(fn)});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape);
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(const Var<T>& v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
typename Tape<T>::Record Tape<T>::record(std::size_t id) const {
  return Record{nodes_[id].kind, nodes_[id].inputs};
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape() != this) {
    throw ContractError("backward: loss belongs to a different tape");
  }
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (!record_) {
    throw ContractError("backward: tape was created without recording");
  }
  if (backward_done_) {
    throw ContractError("backward: tape already replayed");
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

// ---- helpers -------------------------------------------------------------

namespace {

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands on different tapes");
  }
}

template <typename T>
void require_rank2(const Var<T>& a, const char* op) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(a.shape()));
  }
}

enum class Broadcast { kNone, kScalar, kRow };

template <typename T>
Broadcast broadcast_mode(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.shape().size() == 1 && !a.shape().empty() &&
      b.shape()[0] == a.shape().back()) {
    return Broadcast::kRow;
  }
  throw DimensionError(std::string(op) + ": cannot broadcast " +
                       shape_to_string(b.shape()) + " onto " +
                       shape_to_string(a.shape()));
}

inline std::size_t bindex(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::kNone: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return i % cols;
  }
  return i;
}

template <typename T>
Var<T> binary(OpKind kind, const Var<T>& a, const Var<T>& b) {
  const char* name = op_name(kind);
  require_same_tape(a, b, name);
  const Broadcast mode = broadcast_mode(a, b, name);
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t cols = av.cols();
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    const T y = bv[bindex(mode, i, cols)];
    switch (kind) {
      case OpKind::kAdd: out[i] = x + y; break;
      case OpKind::kSub: out[i] = x - y; break;
      default: out[i] = x * y; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  auto fn = [kind, mode, cols, ia, ib](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self);
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad_buffer(ia);
      const auto& bv = tape.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += kind == OpKind::kMul ? g[i] * bv[bindex(mode, i, cols)] : g[i];
      }
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib);
      const auto& av = tape.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        T d = g[i];
        if (kind == OpKind::kSub) d = -d;
        if (kind == OpKind::kMul) d *= av[i];
        gb[bindex(mode, i, cols)] += d;
      }
    }
  };
  return a.tape()->emit(kind, std::move(out), {ia, ib}, fn);
}

}  // namespace

// ---- linear algebra ------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = av[i * k + p];
      const T* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  auto fn = [m, k, n, ia, ib](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad_buffer(ia).data;
      const auto& bv = tape.value(ib).data;
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = bv.data() + p * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib).data;
      const auto& av = tape.value(ia).data;
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T x = av[i * k + p];
          T* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
      }
    }
  };
  return a.tape()->emit(OpKind::kMatmul, std::move(out), {ia, ib}, fn);
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.value();
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
  const std::size_t ia = a.id();
  auto fn = [r, c, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  };
  return a.tape()->emit(OpKind::kTranspose, std::move(out), {ia}, fn);
}

// ---- elementwise ---------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(OpKind::kAdd, a, b);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(OpKind::kSub, a, b);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(OpKind::kMul, a, b);
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= factor;
  const std::size_t ia = a.id();
  auto fn = [factor, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self);
    auto& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  };
  return a.tape()->emit(OpKind::kScale, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const auto& av = a.value();
  Tensor<T> out(av.shape);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T x = av[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  const std::size_t ia = a.id();
  auto fn = [ia, inv_sqrt2](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self);
    const auto& av = tape.value(ia);
    auto& ga = tape.grad_buffer(ia);
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = av[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  };
  return a.tape()->emit(OpKind::kGelu, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>* b,
                   T factor) {
  const bool binary_kind = kind == Elementwise::kAdd ||
                           kind == Elementwise::kSub ||
                           kind == Elementwise::kMul;
  if (binary_kind && b == nullptr) {
    throw ContractError("elementwise: binary kind needs a second operand");
  }
  switch (kind) {
    case Elementwise::kAdd: return add(a, *b);
    case Elementwise::kSub: return sub(a, *b);
    case Elementwise::kMul: return mul(a, *b);
    case Elementwise::kGelu: return gelu(a);
    case Elementwise::kScale: return scale(a, factor);
  }
  throw ContractError("elementwise: unknown kind");
}

// ---- normalisation -------------------------------------------------------

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a, bool causal) {
  const auto& av = a.value();
  const std::size_t c = av.cols(), r = av.rows();
  if (a.shape().empty() || c == 0) {
    throw DimensionError("softmax_lastdim: empty trailing dimension");
  }
  if (causal && (a.shape().size() != 2 || r != c)) {
    throw DimensionError("softmax_lastdim: causal mode needs a square matrix, got " +
                         shape_to_string(a.shape()));
  }
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t width = causal ? i + 1 : c;
    const T* x = av.data.data() + i * c;
    T* y = out.data.data() + i * c;
    T mx = x[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[j]);
    T total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  const std::size_t ia = a.id();
  auto fn = [r, c, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    const auto& y = tape.value(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
      }
    }
  };
  return a.tape()->emit(OpKind::kSoftmax, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> rmsnorm(const Var<T>& a, const Var<T>& gain) {
  require_same_tape(a, gain, "rmsnorm");
  const auto& av = a.value();
  const auto& gv = gain.value();
  const std::size_t c = av.cols(), r = av.rows();
  if (gain.shape().size() != 1 || gv.size() != c) {
    throw DimensionError("rmsnorm: gain " + shape_to_string(gain.shape()) +
                         " does not match input " + shape_to_string(a.shape()));
  }
  Tensor<T> out(av.shape);
  std::vector<T> inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = av.data.data() + i * c;
    T ms = 0;
    for (std::size_t j = 0; j < c; ++j) ms += x[j] * x[j];
    ms /= T(c);
    inv[i] = T(1) / std::sqrt(ms + T(kRmsNormEpsilon));
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = x[j] * inv[i] * gv[j];
  }
  const std::size_t ia = a.id(), ig = gain.id();
  auto fn = [r, c, ia, ig, inv = std::move(inv)](Tape<T>& tape,
                                                 std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    const auto& x = tape.value(ia).data;
    const auto& gv = tape.value(ig).data;
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad_buffer(ia).data;
      for (std::size_t i = 0; i < r; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j)
          dot += g[i * c + j] * gv[j] * x[i * c + j];
        const T s = inv[i];
        const T coef = s * s * s * dot / T(c);
        for (std::size_t j = 0; j < c; ++j) {
          ga[i * c + j] += s * gv[j] * g[i * c + j] - x[i * c + j] * coef;
        }
      }
    }
    if (tape.requires_grad(ig)) {
      auto& gg = tape.grad_buffer(ig).data;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          gg[j] += g[i * c + j] * x[i * c + j] * inv[i];
    }
  };
  return a.tape()->emit(OpKind::kRmsNorm, std::move(out), {ia, ig}, fn);
}

// ---- losses --------------------------------------------------------------

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets,
                     const std::vector<bool>& ignore) {
  require_rank2(logits, "cross_entropy");
  const std::size_t r = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != r || ignore.size() != r) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(ignore.size()) +
                         " ignore flags for " + std::to_string(r) + " rows");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (ignore[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                       " outside vocabulary of " + std::to_string(v));
    }
    ++count;
  }
  if (count == 0) {
    throw ContractError("cross_entropy: every position is ignored");
  }
  const auto& lv = logits.value().data;
  // Row-wise softmax kept for backward.
  std::vector<T> probs(r * v, T(0));
  T total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (ignore[i]) continue;
    const T* x = lv.data() + i * v;
    T mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    const T logz = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(x[j] - logz);
    total += logz - x[targets[i]];
  }
  Tensor<T> out({1});
  out[0] = total / T(count);
  std::vector<int> tg(targets.begin(), targets.end());
  const std::size_t il = logits.id();
  auto fn = [r, v, count, il, tg = std::move(tg), ignore,
             probs = std::move(probs)](Tape<T>& tape, std::size_t self) {
    const T g = tape.out_grad(self)[0] / T(count);
    auto& gl = tape.grad_buffer(il).data;
    for (std::size_t i = 0; i < r; ++i) {
      if (ignore[i]) continue;
      for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
      gl[i * v + tg[i]] -= g;
    }
  };
  return logits.tape()->emit(OpKind::kCrossEntropy, std::move(out), {il}, fn);
}

template <typename T>
Var<T> mse_pairs(const Var<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape) {
    throw DimensionError("mse_pairs: shapes differ, " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape));
  }
  const std::size_t n = a.size();
  if (n == 0) throw DimensionError("mse_pairs: empty operands");
  const auto& av = a.value();
  std::vector<T> diff(n);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = av[i] - b[i];
    total += diff[i] * diff[i];
  }
  Tensor<T> out({1});
  out[0] = total / T(n);
  const std::size_t ia = a.id();
  auto fn = [n, ia, diff = std::move(diff)](Tape<T>& tape, std::size_t self) {
    const T g = tape.out_grad(self)[0] * T(2) / T(n);
    auto& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g * diff[i];
  };
  return a.tape()->emit(OpKind::kMse, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data) total += v;
  Tensor<T> out({1});
  out[0] = total;
  const std::size_t ia = a.id();
  auto fn = [ia](Tape<T>& tape, std::size_t self) {
    const T g = tape.out_grad(self)[0];
    for (auto& x : tape.grad_buffer(ia).data) x += g;
  };
  return a.tape()->emit(OpKind::kSum, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.size() == 0) throw DimensionError("mean: empty operand");
  T total = 0;
  for (T v : a.value().data) total += v;
  const std::size_t n = a.size();
  Tensor<T> out({1});
  out[0] = total / T(n);
  const std::size_t ia = a.id();
  auto fn = [ia, n](Tape<T>& tape, std::size_t self) {
    const T g = tape.out_grad(self)[0] / T(n);
    for (auto& x : tape.grad_buffer(ia).data) x += g;
  };
  return a.tape()->emit(OpKind::kMean, std::move(out), {ia}, fn);
}

// ---- structural ----------------------------------------------------------

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> rows) {
  require_rank2(a, "gather_rows");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor<T> out({idx.size(), c});
  const auto& av = a.value().data;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= r) {
      throw IndexError("gather_rows: row " + std::to_string(idx[k]) +
                       " out of range for " + std::to_string(r) + " rows");
    }
    std::copy_n(av.begin() + idx[k] * c, c, out.data.begin() + k * c);
  }
  const std::size_t ia = a.id();
  auto fn = [c, ia, idx = std::move(idx)](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) ga[idx[k] * c + j] += g[k * c + j];
  };
  return a.tape()->emit(OpKind::kGatherRows, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    require_rank2(p, "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch, " +
                           shape_to_string(parts[0].shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    ids.push_back(p.id());
    offsets.push_back(r * c);
    r += p.rows();
  }
  Tensor<T> out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    std::copy(v.begin(), v.end(), out.data.begin() + offsets[k]);
  }
  auto fn = [ids, offsets](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tape.requires_grad(ids[k])) continue;
      auto& gk = tape.grad_buffer(ids[k]).data;
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  };
  return parts[0].tape()->emit(OpKind::kConcatRows, std::move(out), ids, fn);
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t width) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (start + width > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) +
                         "," + std::to_string(start + width) +
                         ") exceed shape " + shape_to_string(a.shape()));
  }
  Tensor<T> out({r, width});
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(av.begin() + i * c + start, width, out.data.begin() + i * width);
  const std::size_t ia = a.id();
  auto fn = [r, c, start, width, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j)
        ga[i * c + start + j] += g[i * width + j];
  };
  return a.tape()->emit(OpKind::kSliceCols, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, starts, widths;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    require_rank2(p, "concat_cols");
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch, " +
                           shape_to_string(parts[0].shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    ids.push_back(p.id());
    starts.push_back(c);
    widths.push_back(p.cols());
    c += p.cols();
  }
  Tensor<T> out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.begin() + i * widths[k], widths[k],
                  out.data.begin() + i * c + starts[k]);
  }
  auto fn = [r, c, ids, starts, widths](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tape.requires_grad(ids[k])) continue;
      auto& gk = tape.grad_buffer(ids[k]).data;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j)
          gk[i * widths[k] + j] += g[i * c + starts[k] + j];
    }
  };
  return parts[0].tape()->emit(OpKind::kConcatCols, std::move(out), ids, fn);
}

template <typename T>
Var<T> rope(const Var<T>& a, std::span<const std::int64_t> positions,
            double base) {
  require_rank2(a, "rope");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (c % 2 != 0) {
    throw DimensionError("rope: odd column count " + std::to_string(c));
  }
  if (positions.size() != r) {
    throw DimensionError("rope: " + std::to_string(positions.size()) +
                         " positions for " + std::to_string(r) + " rows");
  }
  const std::size_t half = c / 2;
  std::vector<T> cosv(r * half), sinv(r * half);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t m = 0; m < half; ++m) {
      const double freq = std::pow(base, -2.0 * double(m) / double(c));
      const double angle = double(positions[i]) * freq;
      cosv[i * half + m] = T(std::cos(angle));
      sinv[i * half + m] = T(std::sin(angle));
    }
  }
  const auto& av = a.value().data;
  Tensor<T> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t m = 0; m < half; ++m) {
      const T x0 = av[i * c + 2 * m], x1 = av[i * c + 2 * m + 1];
      const T co = cosv[i * half + m], si = sinv[i * half + m];
      out.data[i * c + 2 * m] = x0 * co - x1 * si;
      out.data[i * c + 2 * m + 1] = x0 * si + x1 * co;
    }
  }
  const std::size_t ia = a.id();
  auto fn = [r, c, half, ia, cosv = std::move(cosv), sinv = std::move(sinv)](
                Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t m = 0; m < half; ++m) {
        const T g0 = g[i * c + 2 * m], g1 = g[i * c + 2 * m + 1];
        const T co = cosv[i * half + m], si = sinv[i * half + m];
        ga[i * c + 2 * m] += g0 * co + g1 * si;
        ga[i * c + 2 * m + 1] += -g0 * si + g1 * co;
      }
    }
  };
  return a.tape()->emit(OpKind::kRope, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> frame_mean(const Var<T>& a, std::size_t groups) {
  require_rank2(a, "frame_mean");
  const std::size_t r = a.shape()[0], d = a.shape()[1];
  if (groups == 0 || r % groups != 0) {
    throw DimensionError("frame_mean: " + std::to_string(r) +
                         " rows do not split into " + std::to_string(groups) +
                         " groups");
  }
  const std::size_t slots = r / groups;
  const auto& av = a.value().data;
  Tensor<T> out({slots, d});
  std::vector<T> column(groups);
  for (std::size_t j = 0; j < slots; ++j) {
    for (std::size_t e = 0; e < d; ++e) {
      for (std::size_t i = 0; i < groups; ++i)
        column[i] = av[(i * slots + j) * d + e];
      std::sort(column.begin(), column.end());
      T total = 0;
      for (T v : column) total += v;
      out.data[j * d + e] = total / T(groups);
    }
  }
  const std::size_t ia = a.id();
  auto fn = [groups, slots, d, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    const T w = T(1) / T(groups);
    for (std::size_t i = 0; i < groups; ++i)
      for (std::size_t k = 0; k < slots * d; ++k)
        ga[i * slots * d + k] += g[k] * w;
  };
  return a.tape()->emit(OpKind::kFrameMean, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> tile_rows(const Var<T>& a, std::size_t times) {
  require_rank2(a, "tile_rows");
  const std::size_t block = a.size();
  const auto& av = a.value().data;
  Tensor<T> out({times * a.shape()[0], a.shape()[1]});
  for (std::size_t t = 0; t < times; ++t)
    std::copy(av.begin(), av.end(), out.data.begin() + t * block);
  const std::size_t ia = a.id();
  auto fn = [times, block, ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t k = 0; k < block; ++k) ga[k] += g[t * block + k];
  };
  return a.tape()->emit(OpKind::kTileRows, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " to " +
                         shape_to_string(shape));
  }
  Tensor<T> out(std::move(shape), a.value().data);
  const std::size_t ia = a.id();
  auto fn = [ia](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.out_grad(self).data;
    auto& ga = tape.grad_buffer(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return a.tape()->emit(OpKind::kReshape, std::move(out), {ia}, fn);
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return a.tape()->constant(a.value());
}

// ---- instantiation -------------------------------------------------------

#define STSEQ_INSTANTIATE(T)                                                   \
  template struct Tensor<T>;                                                   \
  template struct Param<T>;                                                    \
  template class Var<T>;                                                       \
  template class Tape<T>;                                                      \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                        \
  template Var<T> transpose(const Var<T>&);                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                           \
  template Var<T> scale(const Var<T>&, T);                                     \
  template Var<T> gelu(const Var<T>&);                                         \
  template Var<T> elementwise(Elementwise, const Var<T>&, const Var<T>*, T);   \
  template Var<T> softmax_lastdim(const Var<T>&, bool);                        \
  template Var<T> rmsnorm(const Var<T>&, const Var<T>&);                       \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>,           \
                                const std::vector<bool>&);                     \
  template Var<T> mse_pairs(const Var<T>&, const Tensor<T>&);                  \
  template Var<T> sum(const Var<T>&);                                          \
  template Var<T> mean(const Var<T>&);                                         \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);    \
  template Var<T> concat_rows(std::span<const Var<T>>);                        \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> concat_cols(std::span<const Var<T>>);                        \
  template Var<T> rope(const Var<T>&, std::span<const std::int64_t>, double);  \
  template Var<T> frame_mean(const Var<T>&, std::size_t);                      \
  template Var<T> tile_rows(const Var<T>&, std::size_t);                       \
  template Var<T> reshape(const Var<T>&, Shape);                               \
  template Var<T> detach(const Var<T>&);

STSEQ_INSTANTIATE(float)
STSEQ_INSTANTIATE(double)

#undef STSEQ_INSTANTIATE

}  // namespace stseq
