#pragma once

// Analytic cost accounting. Counts are per sample, derived purely from layer
// shapes, and use fixed conventions: a multiply-add is 2 FLOPs, a comparison
// or add is 1, batchnorm forward is booked at its eval-mode cost (scale and
// shift, 2 per element), softmax at 3 per element. A backward pass is booked
// at twice the forward cost, so one optimiser step costs 3x forward.

#include <cstdint>

#include "one/model.hpp"
#include "one/nn.hpp"

namespace one {

// Forward FLOPs of one block for a single sample. `dims` is updated in place
// to the block's output dims so blocks can be chained; auto_features resolves
// linear:auto exactly as block construction does.
std::int64_t block_forward_flops(const BlockSpec& spec, FeatDims& dims, int auto_features);

// Inference cost of the stripped net (trunk then target branch).
std::int64_t single_net_forward_flops(const BlockSpec& trunk_spec, const BlockSpec& branch_spec,
                                      FeatDims input_dims, int classes);

// Full multi-branch forward: trunk (one copy per branch when unshared), all
// m+1 branches, the gate head when present, and the gated logit combination.
std::int64_t model_forward_flops(const BlockSpec& trunk_spec, const BlockSpec& branch_spec, int m,
                                 int classes, FeatDims input_dims, const ModelOptions& opts = {});

inline std::int64_t train_step_flops(std::int64_t forward_per_sample, int batch_size) {
  return 3 * forward_per_sample * static_cast<std::int64_t>(batch_size);
}

}  // namespace one
