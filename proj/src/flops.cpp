#include "one/flops.hpp"

namespace one {

namespace {

std::int64_t vol(const FeatDims& d) {
  std::int64_t v = 1;
  for (const int e : d) v *= e;
  return v;
}

}  // namespace

std::int64_t block_forward_flops(const BlockSpec& spec, FeatDims& dims, int auto_features) {
  std::int64_t total = 0;
  for (const auto& d : spec.layers) {
    switch (d.kind) {
      case LayerDesc::Kind::Conv: {
        if (dims.size() != 3) throw ConfigError("flops: conv needs a CxHxW feature map input");
        const int oh = detail::conv_out_extent("conv", dims[1], d.kernel, d.stride, d.pad);
        const int ow = detail::conv_out_extent("conv", dims[2], d.kernel, d.stride, d.pad);
        const std::int64_t outputs = static_cast<std::int64_t>(d.channels) * oh * ow;
        const std::int64_t per_output = 2LL * dims[0] * d.kernel * d.kernel + 1;
        total += outputs * per_output;
        dims = {d.channels, oh, ow};
        break;
      }
      case LayerDesc::Kind::Bn:
        total += 2 * vol(dims);
        break;
      case LayerDesc::Kind::Relu:
        total += vol(dims);
        break;
      case LayerDesc::Kind::MaxPool: {
        if (dims.size() != 3) throw ConfigError("flops: maxpool needs a CxHxW feature map input");
        const int oh = detail::conv_out_extent("maxpool", dims[1], d.kernel, d.stride, 0);
        const int ow = detail::conv_out_extent("maxpool", dims[2], d.kernel, d.stride, 0);
        total += static_cast<std::int64_t>(dims[0]) * oh * ow * (d.kernel * d.kernel - 1);
        dims = {dims[0], oh, ow};
        break;
      }
      case LayerDesc::Kind::Gap:
        if (dims.size() != 3) throw ConfigError("flops: gap needs a CxHxW feature map input");
        total += vol(dims);
        dims = {dims[0]};
        break;
      case LayerDesc::Kind::Linear: {
        if (dims.size() != 1) throw ConfigError("flops: linear needs flat features; add gap");
        int out_f = d.channels;
        if (out_f == 0) {
          if (auto_features <= 0) throw ConfigError("flops: linear:auto not resolvable here");
          out_f = auto_features;
        }
        total += static_cast<std::int64_t>(out_f) * (2LL * dims[0] + 1);
        dims = {out_f};
        break;
      }
    }
  }
  return total;
}

std::int64_t single_net_forward_flops(const BlockSpec& trunk_spec, const BlockSpec& branch_spec,
                                      FeatDims input_dims, int classes) {
  std::int64_t total = block_forward_flops(trunk_spec, input_dims, 0);
  total += block_forward_flops(branch_spec, input_dims, classes);
  return total;
}

std::int64_t model_forward_flops(const BlockSpec& trunk_spec, const BlockSpec& branch_spec, int m,
                                 int classes, FeatDims input_dims, const ModelOptions& opts) {
  FeatDims feat = std::move(input_dims);
  const std::int64_t trunk = block_forward_flops(trunk_spec, feat, 0);
  FeatDims branch_out = feat;
  const std::int64_t branch = block_forward_flops(branch_spec, branch_out, classes);

  const int heads = m + 1;
  std::int64_t total = trunk * (opts.no_sharing ? heads : 1) + branch * heads;

  if (!opts.no_gating) {
    if (feat.size() != 3) throw ConfigError("flops: gate head needs a CxHxW trunk output");
    const std::int64_t f = feat[0];
    total += vol(feat);                    // pooled gate input
    total += heads * (2 * f + 1);          // gate fc
    total += 2 * heads + heads;            // gate bn and relu
    total += 3 * heads;                    // gate softmax
  }
  total += 2LL * heads * classes;  // gated combination of branch logits

  return total;
}

}  // namespace one
