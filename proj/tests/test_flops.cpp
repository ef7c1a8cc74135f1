#include "doctest.h"
#include "one/flops.hpp"

using one::BlockSpec;
using one::FeatDims;
using one::ModelOptions;

namespace {

const char* kTrunk = "conv:8x3s1p1,bn,relu,maxpool:2s2,conv:16x3s1p1,bn,relu,maxpool:2s2";
const char* kBranch = "conv:16x3s1p1,bn,relu,gap,linear:auto";

}  // namespace

TEST_CASE("single conv layer cost matches the hand-computed count") {
  // 8 filters of 3x3 over 1x28x28 with pad 1: 8*28*28 outputs, each a
  // 9-element dot product (18 FLOPs) plus a bias add.
  FeatDims dims{1, 28, 28};
  const auto flops = one::block_forward_flops(BlockSpec::parse("conv:8x3s1p1"), dims, 0);
  CHECK(flops == 8 * 28 * 28 * 19);
  CHECK(dims == FeatDims{8, 28, 28});
}

TEST_CASE("linear layer cost is out*(2*in+1)") {
  FeatDims dims{16};
  CHECK(one::block_forward_flops(BlockSpec::parse("linear:10"), dims, 0) == 330);
  CHECK(dims == FeatDims{10});
  FeatDims d2{16};
  CHECK(one::block_forward_flops(BlockSpec::parse("linear:auto"), d2, 10) == 330);
}

TEST_CASE("block walk chains shapes and sums layer costs") {
  FeatDims dims{1, 28, 28};
  CHECK(one::block_forward_flops(BlockSpec::parse(kTrunk), dims, 0) == 609168);
  CHECK(dims == FeatDims{16, 7, 7});
  CHECK(one::block_forward_flops(BlockSpec::parse(kBranch), dims, 10) == 230042);
  CHECK(dims == FeatDims{10});
}

TEST_CASE("stripped net inference cost is trunk plus target branch") {
  const auto n = one::single_net_forward_flops(BlockSpec::parse(kTrunk),
                                               BlockSpec::parse(kBranch), {1, 28, 28}, 10);
  CHECK(n == 839210);
}

TEST_CASE("full model cost covers all branches, gate, and combination") {
  const auto trunk = BlockSpec::parse(kTrunk);
  const auto branch = BlockSpec::parse(kBranch);
  const auto m2 = one::model_forward_flops(trunk, branch, 2, 10, {1, 28, 28});
  CHECK(m2 == 1300255);

  // relational sanity: more branches cost more, unshared trunks cost more,
  // the stripped net is cheaper than any full model
  const auto m1 = one::model_forward_flops(trunk, branch, 1, 10, {1, 28, 28});
  const auto m3 = one::model_forward_flops(trunk, branch, 3, 10, {1, 28, 28});
  CHECK(m1 < m2);
  CHECK(m2 < m3);

  ModelOptions unshared;
  unshared.no_sharing = true;
  const auto m2u = one::model_forward_flops(trunk, branch, 2, 10, {1, 28, 28}, unshared);
  CHECK(m2u == m2 + 2 * 609168);

  ModelOptions ungated;
  ungated.no_gating = true;
  const auto m2g = one::model_forward_flops(trunk, branch, 2, 10, {1, 28, 28}, ungated);
  CHECK(m2g < m2);

  const auto single = one::single_net_forward_flops(trunk, branch, {1, 28, 28}, 10);
  CHECK(single < m1);
}

TEST_CASE("wider architecture costs more (offline-distillation teacher)") {
  const auto student = one::single_net_forward_flops(BlockSpec::parse(kTrunk),
                                                     BlockSpec::parse(kBranch), {1, 28, 28}, 10);
  const auto teacher = one::single_net_forward_flops(
      BlockSpec::parse("conv:16x3s1p1,bn,relu,maxpool:2s2,conv:32x3s1p1,bn,relu,maxpool:2s2"),
      BlockSpec::parse("conv:32x3s1p1,bn,relu,gap,linear:auto"), {1, 28, 28}, 10);
  CHECK(teacher > 2 * student);
}

TEST_CASE("a train step books three forward passes per sample") {
  CHECK(one::train_step_flops(1000, 128) == 3LL * 1000 * 128);
}

TEST_CASE("cost walk rejects inconsistent layer stacks") {
  FeatDims flat{16};
  CHECK_THROWS_AS(one::block_forward_flops(BlockSpec::parse("conv:4x3s1p1"), flat, 0),
                  one::ConfigError);
  FeatDims map{1, 8, 8};
  CHECK_THROWS_AS(one::block_forward_flops(BlockSpec::parse("linear:4"), map, 0),
                  one::ConfigError);
  FeatDims d{16};
  CHECK_THROWS_AS(one::block_forward_flops(BlockSpec::parse("linear:auto"), d, 0),
                  one::ConfigError);
}
