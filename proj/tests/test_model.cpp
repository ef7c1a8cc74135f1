#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "one/model.hpp"
#include "support/gradcheck.hpp"

using one::BlockSpec;
using one::DistillFlags;
using one::FeatDims;
using one::Mode;
using one::ModelOptions;
using one::Rng;
using one::Shape;
using one::Temperature;
using one::Tensor;
using one::Tensor64;

namespace {

const BlockSpec kTrunk = BlockSpec::parse("conv:4x3s1p1,bn,relu,maxpool:2s2");
const BlockSpec kBranch = BlockSpec::parse("conv:4x3s1p1,bn,relu,gap,linear:auto");

one::MultiBranchModel make_model(int m, unsigned seed = 5, ModelOptions opts = {}) {
  Rng rng(seed);
  return one::build_model<float>(kTrunk, kBranch, m, 10, {1, 8, 8}, rng, opts);
}

}  // namespace

TEST_CASE("m auxiliary branches build m+1 branch stacks") {
  CHECK(make_model(2).num_branches() == 3);
  for (int m = 1; m <= 4; ++m) CHECK(make_model(m).num_branches() == m + 1);
  Rng rng(1);
  CHECK_THROWS_AS(one::build_model<float>(kTrunk, kBranch, 0, 10, {1, 8, 8}, rng),
                  one::ConfigError);
}

TEST_CASE("same seed builds parameter-identical models") {
  auto a = make_model(2, 77);
  auto b = make_model(2, 77);
  auto c = make_model(2, 78);
  std::vector<one::ParamRef> pa, pb, pc;
  a.params(pa);
  b.params(pb);
  c.params(pc);
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differs_from_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    all_equal = all_equal && pa[i].tensor.data() == pb[i].tensor.data();
    any_differs_from_c = any_differs_from_c || pa[i].tensor.data() != pc[i].tensor.data();
  }
  CHECK(all_equal);
  CHECK(any_differs_from_c);
}

TEST_CASE("branch architectures are identical and storage is disjoint") {
  auto model = make_model(2);
  std::vector<one::ParamRef> refs;
  model.params(refs);
  std::set<const float*> storage;
  for (const auto& r : refs) storage.insert(r.tensor.data().data());
  CHECK(storage.size() == refs.size());  // no two params alias

  // branch prefixes appear with the same layer structure
  auto names_for = [&](const std::string& prefix) {
    std::vector<std::string> names;
    for (const auto& r : refs)
      if (r.name.rfind(prefix, 0) == 0) names.push_back(r.name.substr(prefix.size()));
    return names;
  };
  CHECK(names_for("branch0.") == names_for("branch1."));
  CHECK(names_for("branch0.") == names_for("branch2."));
}

TEST_CASE("model rejects specs whose shapes cannot compose") {
  Rng rng(2);
  // trunk collapsing to flat features cannot feed conv branches
  auto flat_trunk = BlockSpec::parse("conv:4x3s1p1,relu,gap");
  CHECK_THROWS_AS(one::build_model<float>(flat_trunk, kBranch, 2, 10, {1, 8, 8}, rng),
                  one::ConfigError);
  // branch that does not end in class logits
  auto headless = BlockSpec::parse("conv:4x3s1p1,relu");
  CHECK_THROWS_AS(one::build_model<float>(kTrunk, headless, 2, 10, {1, 8, 8}, rng),
                  one::ConfigError);
}

TEST_CASE("forward emits per-branch logits, gate weights, and teacher logits") {
  auto model = make_model(2);
  Rng rng(3);
  auto x = Tensor::randn({4, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Train);
  REQUIRE(out.branch_logits.size() == 3);
  for (const auto& z : out.branch_logits) CHECK(z.shape() == Shape{4, 10});
  CHECK(out.gate_weights.shape() == Shape{4, 3});
  CHECK(out.teacher_logits.shape() == Shape{4, 10});
}

TEST_CASE("gate rows are simplex weights") {
  auto model = make_model(2);
  Rng rng(4);
  auto x = Tensor::randn({6, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Train);
  for (int n = 0; n < 6; ++n) {
    float sum = 0;
    for (int i = 0; i < 3; ++i) {
      const float g = out.gate_weights.at({n, i});
      CHECK(g >= 0.0f);
      CHECK(g <= 1.0f);
      sum += g;
    }
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("teacher logits equal the gate-weighted sum of branch logits") {
  auto model = make_model(2);
  Rng rng(5);
  auto x = Tensor::randn({5, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Eval);
  for (int n = 0; n < 5; ++n)
    for (int c = 0; c < 10; ++c) {
      float expect = 0;
      for (int i = 0; i < 3; ++i)
        expect += out.gate_weights.at({n, i}) * out.branch_logits[i].at({n, c});
      CHECK(out.teacher_logits.at({n, c}) == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("zeroed gate weights force the uniform combination") {
  auto model = make_model(2);
  std::fill(model.gate()->fc().weight().data().begin(), model.gate()->fc().weight().data().end(),
            0.0f);
  std::fill(model.gate()->fc().bias().data().begin(), model.gate()->fc().bias().data().end(),
            0.0f);
  Rng rng(6);
  auto x = Tensor::randn({3, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Eval);
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 3; ++i)
      CHECK(out.gate_weights.at({n, i}) == doctest::Approx(1.0f / 3).epsilon(1e-6));
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 10; ++c) {
      const float mean = (out.branch_logits[0].at({n, c}) + out.branch_logits[1].at({n, c}) +
                          out.branch_logits[2].at({n, c})) /
                         3.0f;
      CHECK(out.teacher_logits.at({n, c}) == doctest::Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("equal branch logits pass through any gate unchanged") {
  Rng rng(7);
  auto z = Tensor::randn({4, 6}, rng);
  std::vector<Tensor> logits = {z, z.clone(), z.clone()};
  auto g = one::softmax(Tensor::randn({4, 3}, rng, 2.0));
  auto ze = one::combine_logits(logits, g);
  for (std::size_t i = 0; i < ze.data().size(); ++i)
    CHECK(ze.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-6));
}

TEST_CASE("combined logits scale linearly with the branch logits") {
  Rng rng(8);
  std::vector<Tensor> logits = {Tensor::randn({3, 4}, rng), Tensor::randn({3, 4}, rng)};
  auto g = one::softmax(Tensor::randn({3, 2}, rng));
  auto ze = one::combine_logits(logits, g);
  std::vector<Tensor> scaled;
  for (const auto& z : logits) scaled.push_back(one::scale(z, 2.5));
  auto ze2 = one::combine_logits(scaled, g);
  for (std::size_t i = 0; i < ze.data().size(); ++i)
    CHECK(ze2.data()[i] == doctest::Approx(2.5f * ze.data()[i]).epsilon(1e-5));
}

TEST_CASE("combine_logits validates shapes") {
  Rng rng(9);
  std::vector<Tensor> logits = {Tensor::zeros({3, 4}), Tensor::zeros({3, 4})};
  CHECK_THROWS_AS(one::combine_logits(logits, Tensor::zeros({3, 3})), one::ShapeError);
  CHECK_THROWS_AS(one::combine_logits(logits, Tensor::zeros({2, 2})), one::ShapeError);
  logits.push_back(Tensor::zeros({2, 4}));
  CHECK_THROWS_AS(one::combine_logits(logits, Tensor::zeros({3, 3})), one::ShapeError);
}

TEST_CASE("combine_logits gradients match finite differences") {
  Rng rng(10);
  std::vector<Tensor64> logits = {Tensor64::randn({2, 3}, rng, 1.0, true),
                                  Tensor64::randn({2, 3}, rng, 1.0, true)};
  auto graw = Tensor64::randn({2, 2}, rng, 1.0, true);
  auto f = [&]() {
    auto g = one::softmax(graw);
    auto ze = one::combine_logits(logits, g);
    return one::reduce_mean(one::mul(ze, ze));
  };
  auto res = gradcheck::check(f, {logits[0], logits[1], graw});
  INFO(res.detail);
  CHECK(res.ok);
}

TEST_CASE("stripping keeps the target branch path bit-exact") {
  auto model = make_model(2);
  auto single = model.strip();
  Rng rng(11);
  auto x = Tensor::randn({4, 1, 8, 8}, rng);
  one::NoGradGuard guard;
  auto full = model.forward(x, Mode::Eval);
  auto stripped = single.forward(x, Mode::Eval);
  REQUIRE(stripped.shape() == full.branch_logits[0].shape());
  for (std::size_t i = 0; i < stripped.data().size(); ++i)
    CHECK(stripped.data()[i] == full.branch_logits[0].data()[i]);
}

TEST_CASE("stripped net is smaller and shares parameter storage with the model") {
  auto model = make_model(2);
  auto single = model.strip();
  std::vector<one::ParamRef> full_refs, single_refs;
  model.params(full_refs);
  single.params(single_refs);
  CHECK(one::param_count(single_refs) < one::param_count(full_refs));

  // mutating the model's trunk weight must show through the stripped view
  model.trunk().params("t", full_refs);
  auto& w = model.trunk();
  std::vector<one::ParamRef> trunk_refs;
  w.params("t", trunk_refs);
  trunk_refs[0].tensor.data()[0] += 1.0f;
  bool found_shared = false;
  for (const auto& r : single_refs)
    if (r.tensor.data().data() == trunk_refs[0].tensor.data().data()) found_shared = true;
  CHECK(found_shared);
}

TEST_CASE("ensemble prediction is the teacher posterior") {
  auto model = make_model(2);
  Rng rng(12);
  auto x = Tensor::randn({4, 1, 8, 8}, rng);
  auto p = model.ensemble_predict(x);
  CHECK(p.shape() == Shape{4, 10});
  CHECK_FALSE(p.requires_grad());
  for (int n = 0; n < 4; ++n) {
    float sum = 0;
    for (int c = 0; c < 10; ++c) sum += p.at({n, c});
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
  one::NoGradGuard guard;
  auto out = model.forward(x, Mode::Eval);
  auto expect = one::softmax(out.teacher_logits);
  for (std::size_t i = 0; i < p.data().size(); ++i)
    CHECK(p.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("no-gating ablation weights branches uniformly with no gate parameters") {
  ModelOptions opts;
  opts.no_gating = true;
  auto model = make_model(2, 5, opts);
  CHECK(model.gate() == nullptr);
  Rng rng(13);
  auto x = Tensor::randn({3, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Train);
  for (const float g : out.gate_weights.data()) CHECK(g == doctest::Approx(1.0f / 3));

  std::vector<one::ParamRef> refs;
  model.params(refs);
  for (const auto& r : refs) CHECK(r.name.rfind("gate", 0) != 0);
}

TEST_CASE("no-sharing ablation gives every branch a private trunk") {
  ModelOptions opts;
  opts.no_sharing = true;
  auto model = make_model(2, 5, opts);
  std::vector<one::ParamRef> refs;
  model.params(refs);
  int trunk_copies = 0;
  for (const auto& r : refs)
    if (r.name.rfind("trunk", 0) == 0 && r.name.find(".0.weight") != std::string::npos)
      ++trunk_copies;
  CHECK(trunk_copies == 3);

  // disjoint storage across every parameter
  std::set<const float*> storage;
  for (const auto& r : refs) storage.insert(r.tensor.data().data());
  CHECK(storage.size() == refs.size());

  // shared-trunk model has strictly fewer parameters
  auto shared = make_model(2);
  std::vector<one::ParamRef> shared_refs;
  shared.params(shared_refs);
  CHECK(one::param_count(shared_refs) < one::param_count(refs));

  Rng rng(14);
  auto x = Tensor::randn({2, 1, 8, 8}, rng);
  auto out = model.forward(x, Mode::Eval);
  CHECK(out.branch_logits.size() == 3);
}

TEST_CASE("trunk gradients accumulate every branch and gate contribution") {
  Rng rng(15);
  auto trunk = BlockSpec::parse("conv:2x3s1p1,bn,relu,maxpool:2s2");
  auto branch = BlockSpec::parse("conv:2x3s1p1,bn,relu,gap,linear:auto");
  auto model = one::build_model<double>(trunk, branch, 1, 3, {1, 6, 6}, rng);

  auto x = Tensor64::randn({2, 1, 6, 6}, rng, 1.0, true);
  const std::vector<int> y = {0, 2};

  std::vector<one::ParamRefT<double>> refs;
  model.params(refs);
  std::vector<Tensor64> leaves = {x};
  for (auto& r : refs) leaves.push_back(r.tensor);

  // fully coupled flags make the numeric derivative well-defined for every leaf
  DistillFlags flags;
  flags.kl_backprop_teacher = true;
  auto f = [&]() {
    auto out = model.forward(x, Mode::Train);
    return one::total_loss(out, y, Temperature(3.0), flags).total_tensor;
  };
  auto res = gradcheck::check(f, leaves);
  INFO(res.detail);
  CHECK(res.ok);
}

TEST_CASE("model loss gradients check out with distillation disabled") {
  Rng rng(16);
  auto trunk = BlockSpec::parse("conv:2x3s1p1,bn,relu,maxpool:2s2");
  auto branch = BlockSpec::parse("conv:2x3s1p1,bn,relu,gap,linear:auto");
  auto model = one::build_model<double>(trunk, branch, 1, 3, {1, 6, 6}, rng);

  auto x = Tensor64::randn({2, 1, 6, 6}, rng, 1.0, true);
  const std::vector<int> y = {1, 0};
  std::vector<one::ParamRefT<double>> refs;
  model.params(refs);
  std::vector<Tensor64> leaves = {x};
  for (auto& r : refs) leaves.push_back(r.tensor);

  DistillFlags flags;
  flags.no_distill = true;
  auto f = [&]() {
    auto out = model.forward(x, Mode::Train);
    return one::total_loss(out, y, Temperature(3.0), flags).total_tensor;
  };
  auto res = gradcheck::check(f, leaves);
  INFO(res.detail);
  CHECK(res.ok);
}
