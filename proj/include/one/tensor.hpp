#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "one/error.hpp"
#include "one/rng.hpp"

namespace one {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Grad mode (thread-local). Evaluation loops disable taping via NoGradGuard.
// ---------------------------------------------------------------------------

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Tape node
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // allocated for leaves with requires_grad and during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<S>>> parents;
  // Reads this->grad and accumulates into parents' grads. Saved activations
  // live in the closure.
  std::function<void(Node<S>&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool is_leaf() const { return parents.empty(); }
};

template <class S>
void check_finite(const char* op, const std::vector<S>& data) {
  for (const S v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor: shared handle to a tape node. 32-bit scalars in the training build,
// 64-bit in verification builds; both instantiate the same template.
// ---------------------------------------------------------------------------

template <class S>
class TensorT {
 public:
  using Scalar = S;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad, /*fill=*/S(0));
  }

  static TensorT full(Shape shape, S value, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad, value);
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    }
    detail::check_finite("from_data", data);
    return make_leaf(std::move(shape), std::move(data), requires_grad, S(0));
  }

  static TensorT randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::vector<S> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = static_cast<S>(rng.next_normal() * stddev);
    return make_leaf(std::move(shape), std::move(data), requires_grad, S(0));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return n_->size(); }

  std::vector<S>& data() { return n_->data; }
  const std::vector<S>& data() const { return n_->data; }
  std::vector<S>& grad() { return n_->grad; }
  const std::vector<S>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg && n_->grad.empty()) n_->grad.assign(n_->data.size(), S(0));
    if (!rg) n_->grad.clear();
  }

  const char* op() const { return n_->op; }
  NodePtr node() const { return n_; }

  S item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return n_->data[0];
  }

  S at(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    std::size_t i = 0;
    for (int v : idx) off = off * n_->shape[i++] + v;
    return n_->data[static_cast<std::size_t>(off)];
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  // Leaf copy that shares nothing with the tape.
  TensorT detach() const {
    auto node = std::make_shared<detail::Node<S>>();
    node->shape = n_->shape;
    node->data = n_->data;
    return TensorT(std::move(node));
  }

  TensorT clone(bool requires_grad = false) const {
    auto t = detach();
    t.set_requires_grad(requires_grad);
    return t;
  }

  // Reverse-mode sweep from a scalar root. Leaf grads accumulate (+=) across
  // calls; interior grads are reset at the start of each sweep.
  void backward() const {
    if (size() != 1) {
      throw ShapeError("backward: root must be scalar, got " + shape_str(shape()));
    }
    std::vector<detail::Node<S>*> order;
    topo_sort(n_.get(), order);
    for (detail::Node<S>* node : order) {
      if (!node->is_leaf()) {
        node->grad.assign(node->data.size(), S(0));
      } else if (node->requires_grad && node->grad.empty()) {
        node->grad.assign(node->data.size(), S(0));
      }
    }
    n_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  explicit TensorT(NodePtr node) : n_(std::move(node)) {}

 private:
  static TensorT make_leaf(Shape shape, std::vector<S> data, bool requires_grad, S fill) {
    validate_shape(shape);
    auto node = std::make_shared<detail::Node<S>>();
    const auto n = static_cast<std::size_t>(numel(shape));
    node->shape = std::move(shape);
    node->data = data.empty() && n > 0 ? std::vector<S>(n, fill) : std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(n, S(0));
    return TensorT(std::move(node));
  }

  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
  }

  // Depth-first post-order over the requires_grad subgraph: every node appears
  // after all of its parents, each exactly once.
  static void topo_sort(detail::Node<S>* root, std::vector<detail::Node<S>*>& order) {
    std::unordered_set<detail::Node<S>*> seen;
    std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
    if (!root->requires_grad) return;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      bool descended = false;
      while (next < node->parents.size()) {
        detail::Node<S>* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) {
          stack.emplace_back(p, 0);
          descended = true;
          break;
        }
      }
      if (!descended && next >= stack.back().first->parents.size()) {
        order.push_back(stack.back().first);
        stack.pop_back();
      }
    }
  }

  NodePtr n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---------------------------------------------------------------------------
// Op builder: single entry point for creating tape nodes. Centralizes the
// finite-value check and the requires_grad/no-grad-mode logic.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> make_op(const char* op, Shape out_shape, std::vector<S> out_data,
                   std::vector<TensorT<S>> inputs,
                   std::function<void(detail::Node<S>&)> backward_fn) {
  detail::check_finite(op, out_data);
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(out_shape);
  node->data = std::move(out_data);
  node->op = op;
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return TensorT<S>(std::move(node));
}

// Accumulate `count` values from src into parent's grad buffer.
template <class S>
inline void accumulate(detail::Node<S>& parent, const S* src) {
  if (!parent.requires_grad) return;
  S* dst = parent.grad.data();
  const std::size_t n = parent.data.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// ---------------------------------------------------------------------------
// Dense kernels (deterministic, sequential accumulation order per element).
// ---------------------------------------------------------------------------

namespace kernels {

// c = a*b (or c += a*b when accumulate), row-major [M x K] * [K x N].
template <class S>
void matmul(const S* __restrict a, const S* __restrict b, S* __restrict c, int M, int K, int N,
            bool accumulate = false) {
  for (int i = 0; i < M; ++i) {
    S* ci = c + static_cast<std::size_t>(i) * N;
    if (!accumulate) {
      for (int j = 0; j < N; ++j) ci[j] = S(0);
    }
    const S* ai = a + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const S aik = ai[k];
      const S* bk = b + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) ci[j] += aik * bk[j];
    }
  }
}

template <class S>
void transpose(const S* src, S* dst, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<S> out(static_cast<std::size_t>(M) * N);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), M, K, N);

  return make_op<S>(
      "matmul", {M, N}, std::move(out), {a, b}, [M, K, N](detail::Node<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const S* g = self.grad.data();
        if (pa.requires_grad) {
          // dA = dC * B^T
          std::vector<S> bt(static_cast<std::size_t>(K) * N);
          kernels::transpose(pb.data.data(), bt.data(), K, N);
          kernels::matmul(g, bt.data(), pa.grad.data(), M, N, K, /*accumulate=*/true);
        }
        if (pb.requires_grad) {
          // dB = A^T * dC
          std::vector<S> at(static_cast<std::size_t>(M) * K);
          kernels::transpose(pa.data.data(), at.data(), M, K);
          kernels::matmul(at.data(), g, pb.grad.data(), K, M, N, /*accumulate=*/true);
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise ops with broadcasting. Broadcasting is restricted to two cases:
// a scalar (size-1) operand, or the smaller shape being a trailing suffix of
// the larger one. The output shape is a pure function of the input shapes.
// ---------------------------------------------------------------------------

inline bool is_suffix_of(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(b) == 1) return a;
  if (numel(a) == 1) return b;
  if (is_suffix_of(b, a)) return a;
  if (is_suffix_of(a, b)) return b;
  throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

namespace detail {

// Forward+backward plumbing shared by all binary elementwise ops.
// FwdFn: S(S a, S b). BwdFn: void(S a, S b, S g, S& da, S& db).
template <class S, class FwdFn, class BwdFn>
TensorT<S> binary_elementwise(const char* op, const TensorT<S>& a, const TensorT<S>& b, FwdFn fwd,
                              BwdFn bwd) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = static_cast<std::size_t>(numel(out_shape));
  const std::size_t na = a.data().size(), nb = b.data().size();
  std::vector<S> out(n);
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i % na], pb[i % nb]);

  return make_op<S>(op, std::move(out_shape), std::move(out), {a, b},
                    [n, na, nb, bwd](detail::Node<S>& self) {
                      auto& A = *self.parents[0];
                      auto& B = *self.parents[1];
                      const S* av = A.data.data();
                      const S* bv = B.data.data();
                      const S* g = self.grad.data();
                      S* ga = A.requires_grad ? A.grad.data() : nullptr;
                      S* gb = B.requires_grad ? B.grad.data() : nullptr;
                      for (std::size_t i = 0; i < n; ++i) {
                        S da = S(0), db = S(0);
                        bwd(av[i % na], bv[i % nb], g[i], da, db);
                        if (ga) ga[i % na] += da;
                        if (gb) gb[i % nb] += db;
                      }
                    });
}

template <class S, class FwdFn, class BwdFn>
TensorT<S> unary_elementwise(const char* op, const TensorT<S>& a, FwdFn fwd, BwdFn bwd) {
  const std::size_t n = a.data().size();
  std::vector<S> out(n);
  const S* pa = a.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);

  return make_op<S>(op, a.shape(), std::move(out), {a}, [n, bwd](detail::Node<S>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    const S* av = A.data.data();
    const S* ov = self.data.data();
    const S* g = self.grad.data();
    S* ga = A.grad.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += bwd(av[i], ov[i], g[i]);
  });
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_elementwise<S>(
      "add", a, b, [](S x, S y) { return x + y; },
      [](S, S, S g, S& da, S& db) { da = g, db = g; });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_elementwise<S>(
      "sub", a, b, [](S x, S y) { return x - y; },
      [](S, S, S g, S& da, S& db) { da = g, db = -g; });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_elementwise<S>(
      "mul", a, b, [](S x, S y) { return x * y; },
      [](S x, S y, S g, S& da, S& db) { da = g * y, db = g * x; });
}

template <class S>
TensorT<S> divide(const TensorT<S>& a, const TensorT<S>& b) {
  for (const S v : b.data()) {
    if (v == S(0)) throw DomainError("divide: division by zero");
  }
  return detail::binary_elementwise<S>(
      "div", a, b, [](S x, S y) { return x / y; },
      [](S x, S y, S g, S& da, S& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

template <class S>
TensorT<S> exp(const TensorT<S>& a) {
  return detail::unary_elementwise<S>(
      "exp", a, [](S x) { return std::exp(x); }, [](S, S out, S g) { return g * out; });
}

template <class S>
TensorT<S> log(const TensorT<S>& a) {
  for (const S v : a.data()) {
    if (v <= S(0)) throw DomainError("log: input must be positive");
  }
  return detail::unary_elementwise<S>(
      "log", a, [](S x) { return std::log(x); }, [](S x, S, S g) { return g / x; });
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  return detail::unary_elementwise<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S, S g) { return x > S(0) ? g : S(0); });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, double c) {
  const S cs = static_cast<S>(c);
  return detail::unary_elementwise<S>(
      "scale", a, [cs](S x) { return cs * x; }, [cs](S, S, S g) { return cs * g; });
}

// ---------------------------------------------------------------------------
// Reductions. axis < 0 is not supported; full reductions use the overloads
// without an axis argument. Reduced shapes drop the axis (scalar -> {1}).
// ---------------------------------------------------------------------------

namespace detail {

struct AxisSplit {
  std::int64_t outer, n, inner;
  Shape out_shape;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError("reduce: axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1, {}};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (static_cast<int>(i) != axis) s.out_shape.push_back(shape[i]);
  if (s.out_shape.empty()) s.out_shape = {1};
  return s;
}

}  // namespace detail

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& t) {
  S acc = S(0);
  for (const S v : t.data()) acc += v;
  return make_op<S>("sum", {1}, {acc}, {t}, [](detail::Node<S>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    const S g = self.grad[0];
    for (auto& gv : A.grad) gv += g;
  });
}

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& t, int axis) {
  auto sp = detail::split_axis(t.shape(), axis);
  std::vector<S> out(static_cast<std::size_t>(sp.outer * sp.inner), S(0));
  const S* src = t.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.n; ++k)
      for (std::int64_t i = 0; i < sp.inner; ++i)
        out[static_cast<std::size_t>(o * sp.inner + i)] +=
            src[static_cast<std::size_t>((o * sp.n + k) * sp.inner + i)];

  return make_op<S>("sum_axis", sp.out_shape, std::move(out), {t}, [sp](detail::Node<S>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    const S* g = self.grad.data();
    S* ga = A.grad.data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t k = 0; k < sp.n; ++k)
        for (std::int64_t i = 0; i < sp.inner; ++i)
          ga[static_cast<std::size_t>((o * sp.n + k) * sp.inner + i)] +=
              g[static_cast<std::size_t>(o * sp.inner + i)];
  });
}

template <class S>
TensorT<S> reduce_mean(const TensorT<S>& t) {
  return scale(reduce_sum(t), 1.0 / static_cast<double>(t.size()));
}

template <class S>
TensorT<S> reduce_mean(const TensorT<S>& t, int axis) {
  const auto sp = detail::split_axis(t.shape(), axis);
  return scale(reduce_sum(t, axis), 1.0 / static_cast<double>(sp.n));
}

// Max along an axis; gradient routes to the first maximal element.
template <class S>
TensorT<S> reduce_max(const TensorT<S>& t, int axis) {
  auto sp = detail::split_axis(t.shape(), axis);
  const std::size_t outn = static_cast<std::size_t>(sp.outer * sp.inner);
  std::vector<S> out(outn);
  auto arg = std::make_shared<std::vector<std::int64_t>>(outn);
  const S* src = t.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      std::int64_t best = (o * sp.n) * sp.inner + i;
      S bestv = src[static_cast<std::size_t>(best)];
      for (std::int64_t k = 1; k < sp.n; ++k) {
        const std::int64_t idx = (o * sp.n + k) * sp.inner + i;
        if (src[static_cast<std::size_t>(idx)] > bestv) {
          bestv = src[static_cast<std::size_t>(idx)];
          best = idx;
        }
      }
      out[static_cast<std::size_t>(o * sp.inner + i)] = bestv;
      (*arg)[static_cast<std::size_t>(o * sp.inner + i)] = best;
    }
  }
  return make_op<S>("max_axis", sp.out_shape, std::move(out), {t},
                    [arg](detail::Node<S>& self) {
                      auto& A = *self.parents[0];
                      if (!A.requires_grad) return;
                      const S* g = self.grad.data();
                      for (std::size_t i = 0; i < arg->size(); ++i)
                        A.grad[static_cast<std::size_t>((*arg)[i])] += g[i];
                    });
}

template <class S>
TensorT<S> reduce_max(const TensorT<S>& t) {
  TensorT<S> flat = t;  // treat as 1-D view: same data order
  const S* src = t.data().data();
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < t.size(); ++i)
    if (src[static_cast<std::size_t>(i)] > src[static_cast<std::size_t>(best)]) best = i;
  const S bestv = src[static_cast<std::size_t>(best)];
  return make_op<S>("max", {1}, {bestv}, {t}, [best](detail::Node<S>& self) {
    auto& A = *self.parents[0];
    if (A.requires_grad) A.grad[static_cast<std::size_t>(best)] += self.grad[0];
  });
}

// Index of the maximum along an axis; ties break to the lowest index.
// Carries no gradient.
template <class S>
TensorT<S> argmax(const TensorT<S>& t, int axis) {
  auto sp = detail::split_axis(t.shape(), axis);
  std::vector<S> out(static_cast<std::size_t>(sp.outer * sp.inner));
  const S* src = t.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      std::int64_t best = 0;
      S bestv = src[static_cast<std::size_t>((o * sp.n) * sp.inner + i)];
      for (std::int64_t k = 1; k < sp.n; ++k) {
        const S v = src[static_cast<std::size_t>((o * sp.n + k) * sp.inner + i)];
        if (v > bestv) {
          bestv = v;
          best = k;
        }
      }
      out[static_cast<std::size_t>(o * sp.inner + i)] = static_cast<S>(best);
    }
  }
  return TensorT<S>::from_data(sp.out_shape, std::move(out));
}

// Reshape to a same-size shape (data order preserved).
template <class S>
TensorT<S> reshape(const TensorT<S>& t, Shape shape) {
  if (numel(shape) != t.size()) {
    throw ShapeError("reshape: " + shape_str(t.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<S> out = t.data();
  return make_op<S>("reshape", std::move(shape), std::move(out), {t},
                    [](detail::Node<S>& self) {
                      accumulate(*self.parents[0], self.grad.data());
                    });
}

}  // namespace one
