#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "one/error.hpp"
#include "one/losses.hpp"
#include "one/nn.hpp"
#include "one/rng.hpp"
#include "one/tensor.hpp"

namespace one {

// ---------------------------------------------------------------------------
// Gated combination of branch logits: z_e[n] = sum_i g[n][i] * z_i[n].
// Inputs are the m+1 branch logit tensors followed by the gate weights.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> combine_logits(const std::vector<TensorT<S>>& branch_logits, const TensorT<S>& gate) {
  if (branch_logits.empty()) throw ShapeError("combine_logits: no branch logits");
  const int B = static_cast<int>(branch_logits.size());
  const int N = branch_logits[0].dim(0), C = branch_logits[0].dim(1);
  for (const auto& z : branch_logits) {
    if (z.rank() != 2 || z.dim(0) != N || z.dim(1) != C)
      throw ShapeError("combine_logits: branch logits must share one NxC shape");
  }
  if (gate.rank() != 2 || gate.dim(0) != N || gate.dim(1) != B) {
    throw ShapeError("combine_logits: gate " + shape_str(gate.shape()) + " does not match " +
                     std::to_string(B) + " branches over batch " + std::to_string(N));
  }

  std::vector<S> out(static_cast<std::size_t>(N) * C, S(0));
  const S* gs = gate.data().data();
  for (int i = 0; i < B; ++i) {
    const S* zs = branch_logits[i].data().data();
    for (int n = 0; n < N; ++n) {
      const S w = gs[static_cast<std::size_t>(n) * B + i];
      for (int c = 0; c < C; ++c)
        out[static_cast<std::size_t>(n) * C + c] += w * zs[static_cast<std::size_t>(n) * C + c];
    }
  }

  std::vector<TensorT<S>> inputs = branch_logits;
  inputs.push_back(gate);
  return make_op<S>("combine_logits", {N, C}, std::move(out), std::move(inputs),
                    [B, N, C](detail::Node<S>& self) {
                      auto& gn = *self.parents[static_cast<std::size_t>(B)];
                      const S* g = self.grad.data();
                      const S* gs = gn.data.data();
                      for (int i = 0; i < B; ++i) {
                        auto& zn = *self.parents[static_cast<std::size_t>(i)];
                        for (int n = 0; n < N; ++n) {
                          const std::size_t base = static_cast<std::size_t>(n) * C;
                          const S w = gs[static_cast<std::size_t>(n) * B + i];
                          if (zn.requires_grad)
                            for (int c = 0; c < C; ++c) zn.grad[base + c] += w * g[base + c];
                          if (gn.requires_grad) {
                            S dot = S(0);
                            for (int c = 0; c < C; ++c) dot += zn.data[base + c] * g[base + c];
                            gn.grad[static_cast<std::size_t>(n) * B + i] += dot;
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Gate head: FC -> BN -> ReLU -> softmax over the m+1 branch scores. Takes
// the globally average-pooled trunk features, so its size is independent of
// the input resolution.
// ---------------------------------------------------------------------------

template <class S>
class GateHeadT {
 public:
  GateHeadT(int feature_dim, int n_branches, Rng& rng)
      : fc_(feature_dim, n_branches, rng), bn_(n_branches) {}

  TensorT<S> forward(const TensorT<S>& pooled_features, Mode mode) {
    auto h = fc_.forward(pooled_features, mode);
    h = bn_.forward(h, mode);
    h = relu(h);
    return softmax(h);
  }

  void params(const std::string& prefix, std::vector<ParamRefT<S>>& out) {
    fc_.params(prefix + ".fc", out);
    bn_.params(prefix + ".bn", out);
  }
  void buffers(const std::string& prefix, std::vector<BufferRefT<S>>& out) {
    bn_.buffers(prefix + ".bn", out);
  }

  LinearT<S>& fc() { return fc_; }
  BatchNormT<S>& bn() { return bn_; }

 private:
  LinearT<S> fc_;
  BatchNormT<S> bn_;
};

// ---------------------------------------------------------------------------
// Forward outputs: per-branch logits z_i, gate weights g, teacher logits z_e.
// ---------------------------------------------------------------------------

template <class S>
struct ForwardOutputsT {
  std::vector<TensorT<S>> branch_logits;
  TensorT<S> gate_weights;
  TensorT<S> teacher_logits;
};

using ForwardOutputs = ForwardOutputsT<float>;

struct ModelOptions {
  bool no_gating = false;   // uniform branch weighting instead of the gate head
  bool no_sharing = false;  // private trunk per branch instead of shared layers
};

template <class S>
class SingleNetT;

// ---------------------------------------------------------------------------
// The multi-branch network: a shared trunk, m+1 branches of identical
// architecture (branch 0 is the deployment target), and the gate head.
// ---------------------------------------------------------------------------

template <class S>
class MultiBranchModelT {
 public:
  MultiBranchModelT(const BlockSpec& trunk_spec, const BlockSpec& branch_spec, int m, int C,
                    FeatDims input_dims, Rng& rng, ModelOptions opts = {})
      : trunk_spec_(trunk_spec),
        branch_spec_(branch_spec),
        m_(m),
        C_(C),
        in_dims_(std::move(input_dims)),
        opts_(opts) {
    if (m < 1) throw ConfigError("model: need at least one auxiliary branch (m >= 1)");
    if (C < 2) throw ConfigError("model: need at least two classes");

    const int trunk_copies = opts.no_sharing ? m + 1 : 1;
    for (int t = 0; t < trunk_copies; ++t) trunks_.emplace_back(trunk_spec, in_dims_, 0, rng);
    const FeatDims& feat = trunks_[0].out_dims();
    if (feat.size() != 3) {
      throw ConfigError("model: trunk must emit a CxHxW feature map, got " +
                        std::to_string(feat.size()) + " dims");
    }
    for (int b = 0; b < m + 1; ++b) {
      branches_.emplace_back(branch_spec, feat, C, rng);
      if (branches_.back().out_dims() != FeatDims{C}) {
        throw ConfigError("model: branch must emit " + std::to_string(C) + " class logits");
      }
    }
    if (!opts.no_gating) gate_.emplace(feat[0], m + 1, rng);
  }

  ForwardOutputsT<S> forward(const TensorT<S>& x, Mode mode) {
    ForwardOutputsT<S> out;
    const int N = x.dim(0);
    const int B = m_ + 1;

    std::vector<TensorT<S>> feats;
    if (opts_.no_sharing) {
      feats.reserve(trunks_.size());
      for (auto& trunk : trunks_) feats.push_back(trunk.forward(x, mode));
    } else {
      feats.push_back(trunks_[0].forward(x, mode));
    }

    out.branch_logits.reserve(branches_.size());
    for (std::size_t b = 0; b < branches_.size(); ++b)
      out.branch_logits.push_back(
          branches_[b].forward(feats[opts_.no_sharing ? b : 0], mode));

    if (gate_) {
      out.gate_weights = gate_->forward(gap_.forward(feats[0], mode), mode);
    } else {
      out.gate_weights = TensorT<S>::full({N, B}, S(1) / static_cast<S>(B));
    }
    out.teacher_logits = combine_logits(out.branch_logits, out.gate_weights);
    return out;
  }

  // Deployment mode 1: keep only the trunk and the target branch.
  SingleNetT<S> strip() { return SingleNetT<S>(trunks_[0], branches_[0], trunk_spec_, branch_spec_, C_, in_dims_); }

  // Deployment mode 2: the gated teacher posterior (plain softmax, T=1).
  TensorT<S> ensemble_predict(const TensorT<S>& x) {
    NoGradGuard guard;
    auto out = forward(x, Mode::Eval);
    return softmax(out.teacher_logits);
  }

  void params(std::vector<ParamRefT<S>>& out) {
    if (opts_.no_sharing) {
      for (std::size_t t = 0; t < trunks_.size(); ++t)
        trunks_[t].params("trunk" + std::to_string(t), out);
    } else {
      trunks_[0].params("trunk", out);
    }
    for (std::size_t b = 0; b < branches_.size(); ++b)
      branches_[b].params("branch" + std::to_string(b), out);
    if (gate_) gate_->params("gate", out);
  }
  void buffers(std::vector<BufferRefT<S>>& out) {
    if (opts_.no_sharing) {
      for (std::size_t t = 0; t < trunks_.size(); ++t)
        trunks_[t].buffers("trunk" + std::to_string(t), out);
    } else {
      trunks_[0].buffers("trunk", out);
    }
    for (std::size_t b = 0; b < branches_.size(); ++b)
      branches_[b].buffers("branch" + std::to_string(b), out);
    if (gate_) gate_->buffers("gate", out);
  }

  int num_branches() const { return m_ + 1; }
  int num_classes() const { return C_; }
  int aux_count() const { return m_; }
  const BlockSpec& trunk_spec() const { return trunk_spec_; }
  const BlockSpec& branch_spec() const { return branch_spec_; }
  const FeatDims& input_dims() const { return in_dims_; }
  const ModelOptions& options() const { return opts_; }
  BlockT<S>& trunk(int i = 0) { return trunks_[static_cast<std::size_t>(i)]; }
  BlockT<S>& branch(int i) { return branches_[static_cast<std::size_t>(i)]; }
  GateHeadT<S>* gate() { return gate_ ? &*gate_ : nullptr; }

 private:
  BlockSpec trunk_spec_, branch_spec_;
  int m_, C_;
  FeatDims in_dims_;
  ModelOptions opts_;
  std::vector<BlockT<S>> trunks_;
  std::vector<BlockT<S>> branches_;
  std::optional<GateHeadT<S>> gate_;
  GlobalAvgPoolT<S> gap_;
};

using MultiBranchModel = MultiBranchModelT<float>;

// ---------------------------------------------------------------------------
// The stripped single net: trunk + target branch, nothing else. Parameter
// tensors are shared with the model it came from; batchnorm running stats are
// copied at strip time.
// ---------------------------------------------------------------------------

template <class S>
class SingleNetT {
 public:
  SingleNetT(BlockT<S> trunk, BlockT<S> branch, BlockSpec trunk_spec, BlockSpec branch_spec,
             int C, FeatDims input_dims)
      : trunk_(std::move(trunk)),
        branch_(std::move(branch)),
        trunk_spec_(std::move(trunk_spec)),
        branch_spec_(std::move(branch_spec)),
        C_(C),
        in_dims_(std::move(input_dims)) {}

  // Fresh single net with its own parameters (vanilla baseline training).
  SingleNetT(const BlockSpec& trunk_spec, const BlockSpec& branch_spec, int C,
             FeatDims input_dims, Rng& rng)
      : trunk_(trunk_spec, input_dims, 0, rng),
        branch_(branch_spec, trunk_.out_dims(), C, rng),
        trunk_spec_(trunk_spec),
        branch_spec_(branch_spec),
        C_(C),
        in_dims_(std::move(input_dims)) {
    if (branch_.out_dims() != FeatDims{C}) {
      throw ConfigError("single net: branch must emit " + std::to_string(C) + " class logits");
    }
  }

  TensorT<S> forward(const TensorT<S>& x, Mode mode) {
    return branch_.forward(trunk_.forward(x, mode), mode);
  }

  void params(std::vector<ParamRefT<S>>& out) {
    trunk_.params("trunk", out);
    branch_.params("branch0", out);
  }
  void buffers(std::vector<BufferRefT<S>>& out) {
    trunk_.buffers("trunk", out);
    branch_.buffers("branch0", out);
  }

  int num_classes() const { return C_; }
  const BlockSpec& trunk_spec() const { return trunk_spec_; }
  const BlockSpec& branch_spec() const { return branch_spec_; }
  const FeatDims& input_dims() const { return in_dims_; }

 private:
  BlockT<S> trunk_, branch_;
  BlockSpec trunk_spec_, branch_spec_;
  int C_;
  FeatDims in_dims_;
};

using SingleNet = SingleNetT<float>;

// Free-function entry points used by the trainer and CLI.
template <class S>
MultiBranchModelT<S> build_model(const BlockSpec& trunk_spec, const BlockSpec& branch_spec, int m,
                                 int C, FeatDims input_dims, Rng& rng, ModelOptions opts = {}) {
  return MultiBranchModelT<S>(trunk_spec, branch_spec, m, C, std::move(input_dims), rng, opts);
}

template <class S>
LossBreakdownT<S> total_loss(const ForwardOutputsT<S>& out, const std::vector<int>& y,
                             Temperature T, DistillFlags flags = {}) {
  return total_loss(out.branch_logits, out.teacher_logits, y, T, flags);
}

}  // namespace one
