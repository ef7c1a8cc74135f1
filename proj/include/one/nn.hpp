#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "one/error.hpp"
#include "one/rng.hpp"
#include "one/tensor.hpp"

namespace one {

enum class Mode { Train, Eval };

// Named handles for checkpointing and optimizer enumeration. ParamRef copies
// share storage with the layer (tensors are shared handles); BufferRef points
// at non-differentiable state such as batchnorm running statistics.
template <class S>
struct ParamRefT {
  std::string name;
  TensorT<S> tensor;
};

template <class S>
struct BufferRefT {
  std::string name;
  std::vector<S>* data;
};

using ParamRef = ParamRefT<float>;
using BufferRef = BufferRefT<float>;

// ---------------------------------------------------------------------------
// Convolution, cross-correlation convention (no kernel flip), square kernels.
// Weights live as [C_out x C_in*k*k]; the spatial structure is implied by the
// layer hyperparameters.
// ---------------------------------------------------------------------------

namespace detail {

// col is [N*outH*outW x C*k*k]; zero padding contributes zero entries.
template <class S>
void im2col(const S* x, S* col, int N, int C, int H, int W, int k, int stride, int pad, int outH,
            int outW) {
  const int K = C * k * k;
  for (int n = 0; n < N; ++n) {
    for (int oh = 0; oh < outH; ++oh) {
      for (int ow = 0; ow < outW; ++ow) {
        S* row = col + (static_cast<std::size_t>(n) * outH * outW +
                        static_cast<std::size_t>(oh) * outW + ow) *
                           K;
        for (int c = 0; c < C; ++c) {
          const S* xc = x + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int ki = 0; ki < k; ++ki) {
            const int ih = oh * stride - pad + ki;
            for (int kj = 0; kj < k; ++kj) {
              const int iw = ow * stride - pad + kj;
              const bool in = ih >= 0 && ih < H && iw >= 0 && iw < W;
              row[(c * k + ki) * k + kj] = in ? xc[static_cast<std::size_t>(ih) * W + iw] : S(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of the column gradient back onto the input gradient.
template <class S>
void col2im_add(const S* dcol, S* dx, int N, int C, int H, int W, int k, int stride, int pad,
                int outH, int outW) {
  const int K = C * k * k;
  for (int n = 0; n < N; ++n) {
    for (int oh = 0; oh < outH; ++oh) {
      for (int ow = 0; ow < outW; ++ow) {
        const S* row = dcol + (static_cast<std::size_t>(n) * outH * outW +
                               static_cast<std::size_t>(oh) * outW + ow) *
                                  K;
        for (int c = 0; c < C; ++c) {
          S* xc = dx + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int ki = 0; ki < k; ++ki) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= H) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= W) continue;
              xc[static_cast<std::size_t>(ih) * W + iw] += row[(c * k + ki) * k + kj];
            }
          }
        }
      }
    }
  }
}

inline int conv_out_extent(const char* what, int in, int k, int stride, int pad) {
  const int out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out <= 0) {
    throw ConfigError(std::string(what) + ": kernel " + std::to_string(k) + " stride " +
                      std::to_string(stride) + " pad " + std::to_string(pad) +
                      " yields non-positive output for input extent " + std::to_string(in));
  }
  return out;
}

}  // namespace detail

template <class S>
class Conv2dT {
 public:
  Conv2dT(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad) {
    if (in_ch <= 0 || out_ch <= 0 || k <= 0 || stride <= 0 || pad < 0) {
      throw ConfigError("conv: channels/kernel/stride must be positive, padding non-negative");
    }
    const int fan_in = in_ch * k * k;
    weight_ = TensorT<S>::randn({out_ch, fan_in}, rng, std::sqrt(2.0 / fan_in), true);
    bias_ = TensorT<S>::zeros({out_ch}, true);
  }

  TensorT<S> forward(const TensorT<S>& x, Mode) const {
    if (x.rank() != 4) throw ShapeError("conv: expected NxCxHxW input, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != in_ch_) {
      throw ShapeError("conv: input has " + std::to_string(C) + " channels, layer expects " +
                       std::to_string(in_ch_));
    }
    const int outH = detail::conv_out_extent("conv", H, k_, stride_, pad_);
    const int outW = detail::conv_out_extent("conv", W, k_, stride_, pad_);
    const int P = outH * outW;
    const int K = in_ch_ * k_ * k_;
    const std::size_t rows = static_cast<std::size_t>(N) * P;

    std::vector<S> col(rows * K);
    detail::im2col(x.data().data(), col.data(), N, C, H, W, k_, stride_, pad_, outH, outW);
    std::vector<S> wt(static_cast<std::size_t>(K) * out_ch_);
    kernels::transpose(weight_.data().data(), wt.data(), out_ch_, K);
    std::vector<S> out_mat(rows * out_ch_);
    kernels::matmul(col.data(), wt.data(), out_mat.data(), static_cast<int>(rows), K, out_ch_);

    std::vector<S> out(static_cast<std::size_t>(N) * out_ch_ * P);
    const S* b = bias_.data().data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < out_ch_; ++co)
        for (int p = 0; p < P; ++p)
          out[(static_cast<std::size_t>(n) * out_ch_ + co) * P + p] =
              out_mat[(static_cast<std::size_t>(n) * P + p) * out_ch_ + co] + b[co];

    const int k = k_, stride = stride_, pad = pad_, Cout = out_ch_;
    return make_op<S>(
        "conv2d", {N, out_ch_, outH, outW}, std::move(out), {x, weight_, bias_},
        [N, C, H, W, k, stride, pad, outH, outW, P, K, Cout](detail::Node<S>& self) {
          auto& px = *self.parents[0];
          auto& pw = *self.parents[1];
          auto& pb = *self.parents[2];
          const std::size_t rows = static_cast<std::size_t>(N) * P;

          // regroup the output gradient as [N*P x Cout]
          std::vector<S> dmat(rows * Cout);
          const S* g = self.grad.data();
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co)
              for (int p = 0; p < P; ++p)
                dmat[(static_cast<std::size_t>(n) * P + p) * Cout + co] =
                    g[(static_cast<std::size_t>(n) * Cout + co) * P + p];

          if (pb.requires_grad) {
            for (std::size_t r = 0; r < rows; ++r)
              for (int co = 0; co < Cout; ++co) pb.grad[co] += dmat[r * Cout + co];
          }
          if (pw.requires_grad) {
            std::vector<S> col(rows * K);
            detail::im2col(px.data.data(), col.data(), N, C, H, W, k, stride, pad, outH, outW);
            std::vector<S> dmat_t(static_cast<std::size_t>(Cout) * rows);
            kernels::transpose(dmat.data(), dmat_t.data(), static_cast<int>(rows), Cout);
            kernels::matmul(dmat_t.data(), col.data(), pw.grad.data(), Cout,
                            static_cast<int>(rows), K, /*accumulate=*/true);
          }
          if (px.requires_grad) {
            std::vector<S> dcol(rows * K);
            kernels::matmul(dmat.data(), pw.data.data(), dcol.data(), static_cast<int>(rows), Cout,
                            K);
            detail::col2im_add(dcol.data(), px.grad.data(), N, C, H, W, k, stride, pad, outH,
                               outW);
          }
        });
  }

  void params(const std::string& prefix, std::vector<ParamRefT<S>>& out) {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }
  void buffers(const std::string&, std::vector<BufferRefT<S>>&) {}

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  TensorT<S>& weight() { return weight_; }
  TensorT<S>& bias() { return bias_; }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  TensorT<S> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Batch normalisation over NxCxHxW (per channel) or NxF (per feature).
// Train mode normalises with biased batch variance and rolls the running
// stats (unbiased variance) with `running = momentum*running + (1-m)*batch`.
// Eval mode is a fixed affine map and never touches the running stats.
// ---------------------------------------------------------------------------

template <class S>
class BatchNormT {
 public:
  explicit BatchNormT(int num_features, double eps = 1e-5, double momentum = 0.9)
      : f_(num_features), eps_(eps), momentum_(momentum) {
    if (num_features <= 0) throw ConfigError("batchnorm: feature count must be positive");
    gamma_ = TensorT<S>::full({f_}, S(1), true);
    beta_ = TensorT<S>::zeros({f_}, true);
    running_mean_.assign(static_cast<std::size_t>(f_), S(0));
    running_var_.assign(static_cast<std::size_t>(f_), S(1));
  }

  TensorT<S> forward(const TensorT<S>& x, Mode mode) {
    const bool spatial = x.rank() == 4;
    if (!spatial && x.rank() != 2) {
      throw ShapeError("batchnorm: expected NxCxHxW or NxF input, got " + shape_str(x.shape()));
    }
    const int N = x.dim(0);
    const int C = x.dim(1);
    if (C != f_) {
      throw ShapeError("batchnorm: input has " + std::to_string(C) + " features, layer expects " +
                       std::to_string(f_));
    }
    const int HW = spatial ? x.dim(2) * x.dim(3) : 1;
    const std::int64_t count = static_cast<std::int64_t>(N) * HW;

    std::vector<S> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    if (mode == Mode::Train) {
      if (N < 2) throw DomainError("batchnorm: train mode requires batch size >= 2");
      compute_stats(x.data().data(), N, C, HW, mean.data(), var.data());
      const double unbias = count > 1 ? static_cast<double>(count) / (count - 1) : 1.0;
      for (int c = 0; c < C; ++c) {
        running_mean_[c] = static_cast<S>(momentum_ * running_mean_[c] + (1 - momentum_) * mean[c]);
        running_var_[c] =
            static_cast<S>(momentum_ * running_var_[c] + (1 - momentum_) * unbias * var[c]);
      }
    } else {
      mean = running_mean_;
      var = running_var_;
    }

    std::vector<S> inv_std(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) inv_std[c] = static_cast<S>(1.0 / std::sqrt(var[c] + eps_));

    const S* xs = x.data().data();
    const S* gm = gamma_.data().data();
    const S* bt = beta_.data().data();
    std::vector<S> out(x.data().size());
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int p = 0; p < HW; ++p)
          out[base + p] = gm[c] * (xs[base + p] - mean[c]) * inv_std[c] + bt[c];
      }

    const bool train = mode == Mode::Train;
    auto mean_sp = std::make_shared<std::vector<S>>(std::move(mean));
    auto istd_sp = std::make_shared<std::vector<S>>(std::move(inv_std));
    return make_op<S>(
        "batchnorm", x.shape(), std::move(out), {x, gamma_, beta_},
        [N, C, HW, count, train, mean_sp, istd_sp](detail::Node<S>& self) {
          auto& px = *self.parents[0];
          auto& pg = *self.parents[1];
          auto& pb = *self.parents[2];
          const S* xs = px.data.data();
          const S* gm = pg.data.data();
          const S* g = self.grad.data();
          const S* mu = mean_sp->data();
          const S* istd = istd_sp->data();

          for (int c = 0; c < C; ++c) {
            // per-channel sums over the batch (and spatial positions)
            S sum_g = S(0), sum_gx = S(0);
            for (int n = 0; n < N; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
              for (int p = 0; p < HW; ++p) {
                const S gi = g[base + p];
                sum_g += gi;
                sum_gx += gi * (xs[base + p] - mu[c]) * istd[c];
              }
            }
            if (pb.requires_grad) pb.grad[c] += sum_g;
            if (pg.requires_grad) pg.grad[c] += sum_gx;
            if (!px.requires_grad) continue;
            const S inv_count = S(1) / static_cast<S>(count);
            for (int n = 0; n < N; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
              for (int p = 0; p < HW; ++p) {
                const S xhat = (xs[base + p] - mu[c]) * istd[c];
                if (train) {
                  px.grad[base + p] +=
                      gm[c] * istd[c] * (g[base + p] - inv_count * sum_g - inv_count * xhat * sum_gx);
                } else {
                  px.grad[base + p] += gm[c] * istd[c] * g[base + p];
                }
              }
            }
          }
        });
  }

  void params(const std::string& prefix, std::vector<ParamRefT<S>>& out) {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }
  void buffers(const std::string& prefix, std::vector<BufferRefT<S>>& out) {
    out.push_back({prefix + ".running_mean", &running_mean_});
    out.push_back({prefix + ".running_var", &running_var_});
  }

  int num_features() const { return f_; }
  TensorT<S>& gamma() { return gamma_; }
  TensorT<S>& beta() { return beta_; }
  std::vector<S>& running_mean() { return running_mean_; }
  std::vector<S>& running_var() { return running_var_; }

 private:
  static void compute_stats(const S* x, int N, int C, int HW, S* mean, S* var) {
    const double count = static_cast<double>(N) * HW;
    for (int c = 0; c < C; ++c) {
      double s = 0;
      for (int n = 0; n < N; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int p = 0; p < HW; ++p) s += x[base + p];
      }
      const double m = s / count;
      double v = 0;
      for (int n = 0; n < N; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int p = 0; p < HW; ++p) {
          const double d = x[base + p] - m;
          v += d * d;
        }
      }
      mean[c] = static_cast<S>(m);
      var[c] = static_cast<S>(v / count);
    }
  }

  int f_;
  double eps_, momentum_;
  TensorT<S> gamma_, beta_;
  std::vector<S> running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b with weight [out x in].
// ---------------------------------------------------------------------------

template <class S>
class LinearT {
 public:
  LinearT(int in_f, int out_f, Rng& rng) : in_(in_f), out_(out_f) {
    if (in_f <= 0 || out_f <= 0) throw ConfigError("linear: feature counts must be positive");
    weight_ = TensorT<S>::randn({out_f, in_f}, rng, std::sqrt(2.0 / in_f), true);
    bias_ = TensorT<S>::zeros({out_f}, true);
  }

  TensorT<S> forward(const TensorT<S>& x, Mode) const {
    if (x.rank() != 2) throw ShapeError("linear: expected NxF input, got " + shape_str(x.shape()));
    const int N = x.dim(0), F = x.dim(1);
    if (F != in_) {
      throw ShapeError("linear: input has " + std::to_string(F) + " features, layer expects " +
                       std::to_string(in_));
    }
    std::vector<S> wt(static_cast<std::size_t>(in_) * out_);
    kernels::transpose(weight_.data().data(), wt.data(), out_, in_);
    std::vector<S> out(static_cast<std::size_t>(N) * out_);
    kernels::matmul(x.data().data(), wt.data(), out.data(), N, in_, out_);
    const S* b = bias_.data().data();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) out[static_cast<std::size_t>(n) * out_ + o] += b[o];

    const int in_f = in_, out_f = out_;
    return make_op<S>("linear", {N, out_}, std::move(out), {x, weight_, bias_},
                      [N, in_f, out_f](detail::Node<S>& self) {
                        auto& px = *self.parents[0];
                        auto& pw = *self.parents[1];
                        auto& pb = *self.parents[2];
                        const S* g = self.grad.data();
                        if (pb.requires_grad) {
                          for (int n = 0; n < N; ++n)
                            for (int o = 0; o < out_f; ++o)
                              pb.grad[o] += g[static_cast<std::size_t>(n) * out_f + o];
                        }
                        if (pw.requires_grad) {
                          // dW = g^T x, [out x N][N x in]
                          std::vector<S> gt(static_cast<std::size_t>(out_f) * N);
                          kernels::transpose(g, gt.data(), N, out_f);
                          kernels::matmul(gt.data(), px.data.data(), pw.grad.data(), out_f, N,
                                          in_f, /*accumulate=*/true);
                        }
                        if (px.requires_grad) {
                          // dx = g W, [N x out][out x in]
                          kernels::matmul(g, pw.data.data(), px.grad.data(), N, out_f, in_f,
                                          /*accumulate=*/true);
                        }
                      });
  }

  void params(const std::string& prefix, std::vector<ParamRefT<S>>& out) {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }
  void buffers(const std::string&, std::vector<BufferRefT<S>>&) {}

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  TensorT<S>& weight() { return weight_; }
  TensorT<S>& bias() { return bias_; }

 private:
  int in_, out_;
  TensorT<S> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Pooling. Max pooling routes the gradient to the first maximal element of
// each window (row-major scan order); trailing rows/columns that do not fill
// a window are dropped.
// ---------------------------------------------------------------------------

template <class S>
class MaxPoolT {
 public:
  MaxPoolT(int k, int stride) : k_(k), stride_(stride) {
    if (k <= 0 || stride <= 0) throw ConfigError("maxpool: kernel and stride must be positive");
  }

  TensorT<S> forward(const TensorT<S>& x, Mode) const {
    if (x.rank() != 4)
      throw ShapeError("maxpool: expected NxCxHxW input, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int outH = detail::conv_out_extent("maxpool", H, k_, stride_, 0);
    const int outW = detail::conv_out_extent("maxpool", W, k_, stride_, 0);
    const std::size_t on = static_cast<std::size_t>(N) * C * outH * outW;
    std::vector<S> out(on);
    auto arg = std::make_shared<std::vector<std::int64_t>>(on);
    const S* xs = x.data().data();
    std::size_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int oh = 0; oh < outH; ++oh)
          for (int ow = 0; ow < outW; ++ow, ++o) {
            std::int64_t best = -1;
            S bestv = S(0);
            for (int ki = 0; ki < k_; ++ki)
              for (int kj = 0; kj < k_; ++kj) {
                const std::int64_t idx =
                    static_cast<std::int64_t>(base) + (oh * stride_ + ki) * W + ow * stride_ + kj;
                const S v = xs[idx];
                if (best < 0 || v > bestv) {
                  best = idx;
                  bestv = v;
                }
              }
            out[o] = bestv;
            (*arg)[o] = best;
          }
      }

    return make_op<S>("maxpool", {N, C, outH, outW}, std::move(out), {x},
                      [arg](detail::Node<S>& self) {
                        auto& px = *self.parents[0];
                        if (!px.requires_grad) return;
                        for (std::size_t i = 0; i < arg->size(); ++i)
                          px.grad[static_cast<std::size_t>((*arg)[i])] += self.grad[i];
                      });
  }

  void params(const std::string&, std::vector<ParamRefT<S>>&) {}
  void buffers(const std::string&, std::vector<BufferRefT<S>>&) {}

  int kernel() const { return k_; }
  int stride() const { return stride_; }

 private:
  int k_, stride_;
};

template <class S>
class GlobalAvgPoolT {
 public:
  TensorT<S> forward(const TensorT<S>& x, Mode) const {
    if (x.rank() != 4)
      throw ShapeError("global_avg_pool: expected NxCxHxW input, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<S> out(static_cast<std::size_t>(N) * C);
    const S* xs = x.data().data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        S s = S(0);
        for (int p = 0; p < HW; ++p) s += xs[base + p];
        out[static_cast<std::size_t>(n) * C + c] = s / static_cast<S>(HW);
      }
    return make_op<S>("global_avg_pool", {N, C}, std::move(out), {x},
                      [N, C, HW](detail::Node<S>& self) {
                        auto& px = *self.parents[0];
                        if (!px.requires_grad) return;
                        for (int n = 0; n < N; ++n)
                          for (int c = 0; c < C; ++c) {
                            const S g = self.grad[static_cast<std::size_t>(n) * C + c] /
                                        static_cast<S>(HW);
                            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                            for (int p = 0; p < HW; ++p) px.grad[base + p] += g;
                          }
                      });
  }

  void params(const std::string&, std::vector<ParamRefT<S>>&) {}
  void buffers(const std::string&, std::vector<BufferRefT<S>>&) {}
};

template <class S>
class ReluLayerT {
 public:
  TensorT<S> forward(const TensorT<S>& x, Mode) const { return relu(x); }
  void params(const std::string&, std::vector<ParamRefT<S>>&) {}
  void buffers(const std::string&, std::vector<BufferRefT<S>>&) {}
};

using Conv2d = Conv2dT<float>;
using BatchNorm = BatchNormT<float>;
using Linear = LinearT<float>;
using MaxPool = MaxPoolT<float>;
using GlobalAvgPool = GlobalAvgPoolT<float>;

// ---------------------------------------------------------------------------
// Block specs. A block is an ordered list of layer descriptors written as a
// comma-separated string, e.g.
//   "conv:8x3s1p1,bn,relu,maxpool:2s2"
//   "conv:16x3s1p1,bn,relu,gap,linear:auto"
// linear:auto resolves to the class count when the block is instantiated.
// ---------------------------------------------------------------------------

struct LayerDesc {
  enum class Kind { Conv, Bn, Relu, MaxPool, Gap, Linear } kind;
  int channels = 0;  // conv out channels / linear out features (0 = auto)
  int kernel = 0;
  int stride = 1;
  int pad = 0;

  bool operator==(const LayerDesc&) const = default;
};

struct BlockSpec {
  std::vector<LayerDesc> layers;

  static BlockSpec parse(const std::string& text);
  std::string to_string() const;

  bool operator==(const BlockSpec&) const = default;
};

namespace detail {

inline int parse_int(const std::string& token, std::size_t& pos, const std::string& ctx) {
  std::size_t start = pos;
  while (pos < token.size() && std::isdigit(static_cast<unsigned char>(token[pos]))) ++pos;
  if (pos == start) throw ConfigError("block spec: expected a number in '" + ctx + "'");
  return std::stoi(token.substr(start, pos - start));
}

inline LayerDesc parse_layer(const std::string& token) {
  LayerDesc d{};
  const auto colon = token.find(':');
  const std::string head = token.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : token.substr(colon + 1);

  if (head == "bn") {
    d.kind = LayerDesc::Kind::Bn;
  } else if (head == "relu") {
    d.kind = LayerDesc::Kind::Relu;
  } else if (head == "gap") {
    d.kind = LayerDesc::Kind::Gap;
  } else if (head == "conv") {
    // CxKsSpP, e.g. 8x3s1p1
    d.kind = LayerDesc::Kind::Conv;
    std::size_t pos = 0;
    d.channels = parse_int(args, pos, token);
    if (pos >= args.size() || args[pos] != 'x')
      throw ConfigError("block spec: conv wants CxKsSpP, got '" + token + "'");
    ++pos;
    d.kernel = parse_int(args, pos, token);
    if (pos < args.size() && args[pos] == 's') {
      ++pos;
      d.stride = parse_int(args, pos, token);
    }
    if (pos < args.size() && args[pos] == 'p') {
      ++pos;
      d.pad = parse_int(args, pos, token);
    }
    if (pos != args.size()) throw ConfigError("block spec: trailing junk in '" + token + "'");
  } else if (head == "maxpool") {
    // KsS, e.g. 2s2
    d.kind = LayerDesc::Kind::MaxPool;
    std::size_t pos = 0;
    d.kernel = parse_int(args, pos, token);
    d.stride = d.kernel;
    if (pos < args.size() && args[pos] == 's') {
      ++pos;
      d.stride = parse_int(args, pos, token);
    }
    if (pos != args.size()) throw ConfigError("block spec: trailing junk in '" + token + "'");
  } else if (head == "linear") {
    d.kind = LayerDesc::Kind::Linear;
    if (args == "auto") {
      d.channels = 0;
    } else {
      std::size_t pos = 0;
      d.channels = parse_int(args, pos, token);
      if (pos != args.size()) throw ConfigError("block spec: trailing junk in '" + token + "'");
    }
  } else {
    throw ConfigError("block spec: unknown layer '" + token + "'");
  }
  return d;
}

}  // namespace detail

inline BlockSpec BlockSpec::parse(const std::string& text) {
  BlockSpec spec;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    // tolerate surrounding whitespace
    const auto a = token.find_first_not_of(" \t");
    const auto b = token.find_last_not_of(" \t");
    if (a == std::string::npos) throw ConfigError("block spec: empty layer token in '" + text + "'");
    spec.layers.push_back(detail::parse_layer(token.substr(a, b - a + 1)));
  }
  if (spec.layers.empty()) throw ConfigError("block spec: no layers in '" + text + "'");
  return spec;
}

inline std::string BlockSpec::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& d = layers[i];
    if (i) os << ',';
    switch (d.kind) {
      case LayerDesc::Kind::Conv:
        os << "conv:" << d.channels << 'x' << d.kernel << 's' << d.stride << 'p' << d.pad;
        break;
      case LayerDesc::Kind::Bn:
        os << "bn";
        break;
      case LayerDesc::Kind::Relu:
        os << "relu";
        break;
      case LayerDesc::Kind::MaxPool:
        os << "maxpool:" << d.kernel << 's' << d.stride;
        break;
      case LayerDesc::Kind::Gap:
        os << "gap";
        break;
      case LayerDesc::Kind::Linear:
        os << "linear:" << (d.channels == 0 ? std::string("auto") : std::to_string(d.channels));
        break;
    }
  }
  return os.str();
}

// Feature dims of activations flowing between layers, batch dim excluded:
// {C,H,W} for feature maps, {F} after gap or linear.
using FeatDims = std::vector<int>;

// ---------------------------------------------------------------------------
// Block: an instantiated layer stack. Construction performs shape inference
// and fails on any non-positive intermediate extent or feature mismatch.
// ---------------------------------------------------------------------------

template <class S>
class BlockT {
 public:
  using Layer = std::variant<Conv2dT<S>, BatchNormT<S>, ReluLayerT<S>, MaxPoolT<S>,
                             GlobalAvgPoolT<S>, LinearT<S>>;

  BlockT() = default;

  // auto_features resolves "linear:auto" (0 = forbid auto).
  BlockT(const BlockSpec& spec, FeatDims in_dims, int auto_features, Rng& rng) : spec_(spec) {
    FeatDims dims = std::move(in_dims);
    for (const auto& d : spec.layers) {
      switch (d.kind) {
        case LayerDesc::Kind::Conv: {
          require_map(dims, "conv");
          layers_.emplace_back(Conv2dT<S>(dims[0], d.channels, d.kernel, d.stride, d.pad, rng));
          dims = {d.channels, detail::conv_out_extent("conv", dims[1], d.kernel, d.stride, d.pad),
                  detail::conv_out_extent("conv", dims[2], d.kernel, d.stride, d.pad)};
          break;
        }
        case LayerDesc::Kind::Bn:
          layers_.emplace_back(BatchNormT<S>(dims[0]));
          break;
        case LayerDesc::Kind::Relu:
          layers_.emplace_back(ReluLayerT<S>{});
          break;
        case LayerDesc::Kind::MaxPool: {
          require_map(dims, "maxpool");
          layers_.emplace_back(MaxPoolT<S>(d.kernel, d.stride));
          dims = {dims[0], detail::conv_out_extent("maxpool", dims[1], d.kernel, d.stride, 0),
                  detail::conv_out_extent("maxpool", dims[2], d.kernel, d.stride, 0)};
          break;
        }
        case LayerDesc::Kind::Gap:
          require_map(dims, "gap");
          layers_.emplace_back(GlobalAvgPoolT<S>{});
          dims = {dims[0]};
          break;
        case LayerDesc::Kind::Linear: {
          if (dims.size() != 1) {
            throw ConfigError("block spec: linear needs flat features, got a feature map; add gap");
          }
          int out_f = d.channels;
          if (out_f == 0) {
            if (auto_features <= 0) throw ConfigError("block spec: linear:auto not resolvable here");
            out_f = auto_features;
          }
          layers_.emplace_back(LinearT<S>(dims[0], out_f, rng));
          dims = {out_f};
          break;
        }
      }
    }
    out_dims_ = std::move(dims);
  }

  TensorT<S> forward(const TensorT<S>& x, Mode mode) {
    TensorT<S> h = x;
    for (auto& layer : layers_)
      h = std::visit([&](auto& l) { return l.forward(h, mode); }, layer);
    return h;
  }

  void params(const std::string& prefix, std::vector<ParamRefT<S>>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      std::visit([&](auto& l) { l.params(prefix + "." + std::to_string(i), out); }, layers_[i]);
  }
  void buffers(const std::string& prefix, std::vector<BufferRefT<S>>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      std::visit([&](auto& l) { l.buffers(prefix + "." + std::to_string(i), out); }, layers_[i]);
  }

  const BlockSpec& spec() const { return spec_; }
  const FeatDims& out_dims() const { return out_dims_; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  static void require_map(const FeatDims& dims, const char* what) {
    if (dims.size() != 3) {
      throw ConfigError(std::string("block spec: ") + what +
                        " needs a CxHxW feature map input, got flat features");
    }
  }

  BlockSpec spec_;
  std::vector<Layer> layers_;
  FeatDims out_dims_;
};

using Block = BlockT<float>;

// Total scalar parameter count across a set of refs.
template <class S>
std::int64_t param_count(const std::vector<ParamRefT<S>>& refs) {
  std::int64_t n = 0;
  for (const auto& r : refs) n += r.tensor.size();
  return n;
}

}  // namespace one
