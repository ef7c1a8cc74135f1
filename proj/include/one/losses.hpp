#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "one/error.hpp"
#include "one/tensor.hpp"

namespace one {

// Probabilities below this floor are clamped before any log. Prevents Inf
// from dead branches early in training; every clamp bumps a warning counter.
inline constexpr double kProbFloor = 1e-12;

inline std::uint64_t& prob_clamp_count() {
  thread_local std::uint64_t n = 0;
  return n;
}

struct Temperature {
  double value = 3.0;
  Temperature() = default;
  explicit Temperature(double t) : value(t) {
    if (!(t > 0)) throw ConfigError("temperature must be positive, got " + std::to_string(t));
  }
};

struct DistillFlags {
  bool no_distill = false;          // drop the KL term entirely
  bool kl_backprop_teacher = false; // let KL gradients flow into the teacher logits
};

// ---------------------------------------------------------------------------
// Row-wise softmax with max-subtraction.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax(const TensorT<S>& z) {
  if (z.rank() != 2) throw ShapeError("softmax: expected NxC logits, got " + shape_str(z.shape()));
  const int N = z.dim(0), C = z.dim(1);
  std::vector<S> out(z.data().size());
  const S* zs = z.data().data();
  for (int n = 0; n < N; ++n) {
    const S* row = zs + static_cast<std::size_t>(n) * C;
    S* orow = out.data() + static_cast<std::size_t>(n) * C;
    S mx = row[0];
    for (int c = 1; c < C; ++c) mx = row[c] > mx ? row[c] : mx;
    S sum = S(0);
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (int c = 0; c < C; ++c) orow[c] /= sum;
  }
  return make_op<S>("softmax", z.shape(), std::move(out), {z}, [N, C](detail::Node<S>& self) {
    auto& pz = *self.parents[0];
    if (!pz.requires_grad) return;
    const S* p = self.data.data();
    const S* g = self.grad.data();
    for (int n = 0; n < N; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * C;
      S dot = S(0);
      for (int c = 0; c < C; ++c) dot += g[base + c] * p[base + c];
      for (int c = 0; c < C; ++c) pz.grad[base + c] += p[base + c] * (g[base + c] - dot);
    }
  });
}

// Temperature-scaled softmax; T=1 reduces to the plain posterior.
template <class S>
TensorT<S> soft_targets(const TensorT<S>& z, Temperature T) {
  return softmax(scale(z, 1.0 / T.value));
}

namespace detail {

inline void check_labels(const std::vector<int>& y, int N, int C) {
  if (static_cast<int>(y.size()) != N) {
    throw ShapeError("labels: got " + std::to_string(y.size()) + " labels for batch of " +
                     std::to_string(N));
  }
  for (const int v : y) {
    if (v < 0 || v >= C)
      throw DomainError("labels: class " + std::to_string(v) + " outside [0, " +
                        std::to_string(C) + ")");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cross-entropy against hard labels, mean over the batch.
// ---------------------------------------------------------------------------

// On probabilities. p(y) below the floor is clamped and counted, never Inf.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& p, const std::vector<int>& y) {
  if (p.rank() != 2)
    throw ShapeError("cross_entropy: expected NxC probabilities, got " + shape_str(p.shape()));
  const int N = p.dim(0), C = p.dim(1);
  detail::check_labels(y, N, C);
  const S* ps = p.data().data();
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    double v = ps[static_cast<std::size_t>(n) * C + y[n]];
    if (v < kProbFloor) {
      v = kProbFloor;
      ++prob_clamp_count();
    }
    acc -= std::log(v);
  }
  const S loss = static_cast<S>(acc / N);
  auto labels = std::make_shared<std::vector<int>>(y);
  return make_op<S>("cross_entropy", {1}, {loss}, {p}, [N, C, labels](detail::Node<S>& self) {
    auto& pp = *self.parents[0];
    if (!pp.requires_grad) return;
    const S g = self.grad[0];
    for (int n = 0; n < N; ++n) {
      const std::size_t idx = static_cast<std::size_t>(n) * C + (*labels)[n];
      const S v = pp.data[idx];
      // clamped entries sit on the flat part of the clamp, gradient zero
      if (v >= static_cast<S>(kProbFloor)) pp.grad[idx] += g * (S(-1) / (v * static_cast<S>(N)));
    }
  });
}

// Fused softmax + cross-entropy on logits: numerically stable, and its
// gradient is the textbook (p - onehot)/N.
template <class S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& z, const std::vector<int>& y) {
  if (z.rank() != 2)
    throw ShapeError("softmax_cross_entropy: expected NxC logits, got " + shape_str(z.shape()));
  const int N = z.dim(0), C = z.dim(1);
  detail::check_labels(y, N, C);
  const S* zs = z.data().data();
  auto probs = std::make_shared<std::vector<S>>(z.data().size());
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    const S* row = zs + static_cast<std::size_t>(n) * C;
    S* prow = probs->data() + static_cast<std::size_t>(n) * C;
    S mx = row[0];
    for (int c = 1; c < C; ++c) mx = row[c] > mx ? row[c] : mx;
    double sum = 0;
    for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
    const double lse = mx + std::log(sum);
    acc += lse - row[y[n]];
    for (int c = 0; c < C; ++c)
      prow[c] = static_cast<S>(std::exp(static_cast<double>(row[c] - mx)) / sum);
  }
  const S loss = static_cast<S>(acc / N);
  auto labels = std::make_shared<std::vector<int>>(y);
  return make_op<S>("softmax_ce", {1}, {loss}, {z},
                    [N, C, probs, labels](detail::Node<S>& self) {
                      auto& pz = *self.parents[0];
                      if (!pz.requires_grad) return;
                      const S g = self.grad[0];
                      const S invN = S(1) / static_cast<S>(N);
                      for (int n = 0; n < N; ++n) {
                        const std::size_t base = static_cast<std::size_t>(n) * C;
                        for (int c = 0; c < C; ++c) {
                          const S onehot = c == (*labels)[n] ? S(1) : S(0);
                          pz.grad[base + c] += g * ((*probs)[base + c] - onehot) * invN;
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// KL divergence KL(p_t || p_s), mean over the batch. Student probabilities
// under the floor are clamped (and counted); zero teacher mass contributes
// zero, matching the p log p limit.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> kl_divergence(const TensorT<S>& teacher, const TensorT<S>& student) {
  if (teacher.rank() != 2 || teacher.shape() != student.shape()) {
    throw ShapeError("kl_divergence: teacher " + shape_str(teacher.shape()) + " vs student " +
                     shape_str(student.shape()));
  }
  const int N = teacher.dim(0), C = teacher.dim(1);
  const S* pt = teacher.data().data();
  const S* ps = student.data().data();
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t i = static_cast<std::size_t>(n) * C + c;
      const double t = pt[i];
      if (t <= 0) continue;
      double s = ps[i];
      if (s < kProbFloor) {
        s = kProbFloor;
        ++prob_clamp_count();
      }
      acc += t * (std::log(t) - std::log(s));
    }
  }
  const S loss = static_cast<S>(acc / N);
  return make_op<S>(
      "kl_divergence", {1}, {loss}, {teacher, student}, [N, C](detail::Node<S>& self) {
        auto& tn = *self.parents[0];
        auto& sn = *self.parents[1];
        const S g = self.grad[0];
        const S invN = S(1) / static_cast<S>(N);
        const std::size_t total = static_cast<std::size_t>(N) * C;
        for (std::size_t i = 0; i < total; ++i) {
          const S t = tn.data[i];
          const S s = sn.data[i];
          const S sc = s < static_cast<S>(kProbFloor) ? static_cast<S>(kProbFloor) : s;
          if (sn.requires_grad && t > S(0) && s >= static_cast<S>(kProbFloor)) {
            sn.grad[i] += g * (-t / sc) * invN;
          }
          if (tn.requires_grad && t > S(0)) {
            tn.grad[i] += g * (std::log(t / sc) + S(1)) * invN;
          }
        }
      });
}

// Sum over branches of KL(teacher || branch_i). Detaching the teacher is the
// caller's decision (total_loss applies the default).
template <class S>
TensorT<S> kl_distill(const TensorT<S>& teacher_soft,
                      const std::vector<TensorT<S>>& branch_softs) {
  if (branch_softs.empty()) throw ShapeError("kl_distill: no branch distributions");
  TensorT<S> acc = kl_divergence(teacher_soft, branch_softs[0]);
  for (std::size_t i = 1; i < branch_softs.size(); ++i)
    acc = add(acc, kl_divergence(teacher_soft, branch_softs[i]));
  return acc;
}

// ---------------------------------------------------------------------------
// Total objective: sum of per-branch CE, teacher CE, and the KL distillation
// term weighted by T^2 so gradient magnitudes stay comparable across T.
// ---------------------------------------------------------------------------

template <class S>
struct LossBreakdownT {
  std::vector<S> branch_ce;
  S teacher_ce = S(0);
  S kl = S(0);
  S total = S(0);
  TensorT<S> total_tensor;  // differentiable handle for backward()
};

using LossBreakdown = LossBreakdownT<float>;

template <class S>
LossBreakdownT<S> total_loss(const std::vector<TensorT<S>>& branch_logits,
                             const TensorT<S>& teacher_logits, const std::vector<int>& y,
                             Temperature T, DistillFlags flags = {}) {
  if (branch_logits.empty()) throw ShapeError("total_loss: no branch logits");
  LossBreakdownT<S> out;

  TensorT<S> acc;
  for (const auto& z : branch_logits) {
    auto ce = softmax_cross_entropy(z, y);
    out.branch_ce.push_back(ce.item());
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  auto tce = softmax_cross_entropy(teacher_logits, y);
  out.teacher_ce = tce.item();
  acc = add(acc, tce);

  if (!flags.no_distill) {
    TensorT<S> teacher_soft = soft_targets(
        flags.kl_backprop_teacher ? teacher_logits : teacher_logits.detach(), T);
    std::vector<TensorT<S>> branch_softs;
    branch_softs.reserve(branch_logits.size());
    for (const auto& z : branch_logits) branch_softs.push_back(soft_targets(z, T));
    auto kl = kl_distill(teacher_soft, branch_softs);
    out.kl = kl.item();
    acc = add(acc, scale(kl, T.value * T.value));
  }

  out.total = acc.item();
  out.total_tensor = acc;
  return out;
}

}  // namespace one
