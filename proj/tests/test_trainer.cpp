#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "one/trainer.hpp"

using one::BlockSpec;
using one::LossBreakdown;
using one::MetricsRecord;
using one::Rng;
using one::SgdNesterov;
using one::Temperature;
using one::Tensor;
using one::TrainConfig;

namespace fs = std::filesystem;

TEST_CASE("lr schedule drops a decade at the half and three-quarter marks") {
  CHECK(one::lr_at(0, 300, 0.1) == 0.1);
  CHECK(one::lr_at(149, 300, 0.1) == 0.1);
  CHECK(one::lr_at(150, 300, 0.1) == doctest::Approx(0.01));
  CHECK(one::lr_at(224, 300, 0.1) == doctest::Approx(0.01));
  CHECK(one::lr_at(225, 300, 0.1) == doctest::Approx(0.001));
  CHECK(one::lr_at(299, 300, 0.1) == doctest::Approx(0.001));

  CHECK(one::lr_at(19, 40, 0.1) == 0.1);
  CHECK(one::lr_at(20, 40, 0.1) == doctest::Approx(0.01));

  CHECK(one::lr_at(0, 4, 0.1) == 0.1);
  CHECK(one::lr_at(1, 4, 0.1) == 0.1);
  CHECK(one::lr_at(2, 4, 0.1) == doctest::Approx(0.01));
  CHECK(one::lr_at(3, 4, 0.1) == doctest::Approx(0.001));

  CHECK_THROWS_AS(one::lr_at(-1, 10, 0.1), one::ConfigError);
  CHECK_THROWS_AS(one::lr_at(10, 10, 0.1), one::ConfigError);
}

TEST_CASE("lr schedule is non-increasing in the epoch") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int epochs = 1 + static_cast<int>(rng.next_below(400));
    double prev = one::lr_at(0, epochs, 0.1);
    for (int e = 1; e < epochs; ++e) {
      const double cur = one::lr_at(e, epochs, 0.1);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

namespace {

one::ParamRef single_param(const char* name, std::vector<float> values) {
  const int n = static_cast<int>(values.size());
  return {name, Tensor::from_data({n}, std::move(values), true)};
}

void set_grad(one::ParamRef& p, const std::vector<float>& g) { p.tensor.grad() = g; }

}  // namespace

TEST_CASE("momentum-free step is plain gradient descent") {
  auto p = single_param("w", {1.0f, 2.0f});
  SgdNesterov opt({p}, 0.0, 0.0);
  set_grad(p, {0.5f, -1.0f});
  opt.step(0.1);
  CHECK(p.tensor.data()[0] == doctest::Approx(1.0f - 0.1f * 0.5f));
  CHECK(p.tensor.data()[1] == doctest::Approx(2.0f + 0.1f));
}

TEST_CASE("two constant-gradient steps match the hand-iterated update") {
  // v <- mu v + g; w <- w - lr (g + mu v). With g=1, mu=0.9, lr=0.1:
  // step 1: v=1,    w -= 0.1*(1+0.9)    = 0.19
  // step 2: v=1.9,  w -= 0.1*(1+1.71)   = 0.271
  auto p = single_param("w", {0.0f});
  SgdNesterov opt({p}, 0.9, 0.0);
  set_grad(p, {1.0f});
  opt.step(0.1);
  CHECK(p.tensor.data()[0] == doctest::Approx(-0.19f));
  set_grad(p, {1.0f});
  opt.step(0.1);
  CHECK(p.tensor.data()[0] == doctest::Approx(-0.19f - 0.271f));
}

TEST_CASE("zero gradient and zero velocity leave parameters untouched") {
  auto p = single_param("w", {3.0f, -4.0f});
  SgdNesterov opt({p}, 0.9, 0.0);
  set_grad(p, {0.0f, 0.0f});
  opt.step(0.1);
  CHECK(p.tensor.data() == std::vector<float>{3.0f, -4.0f});
}

TEST_CASE("weight decay acts through the coupled gradient") {
  // g=0, wd=0.1, mu=0, w=1: gw = 0.1, w <- 1 - lr*0.1
  auto p = single_param("w", {1.0f});
  SgdNesterov opt({p}, 0.0, 0.1);
  set_grad(p, {0.0f});
  opt.step(0.5);
  CHECK(p.tensor.data()[0] == doctest::Approx(1.0f - 0.5f * 0.1f));
}

TEST_CASE("non-finite gradients abort with the parameter named") {
  auto p = single_param("trunk.0.weight", {1.0f});
  SgdNesterov opt({p}, 0.9, 0.0);
  set_grad(p, {std::numeric_limits<float>::quiet_NaN()});
  try {
    opt.step(0.1);
    FAIL("expected NumericError");
  } catch (const one::NumericError& e) {
    CHECK(std::string(e.what()).find("trunk.0.weight") != std::string::npos);
  }
}

TEST_CASE("optimizer state round-trips through save and restore") {
  auto p = single_param("w", {0.0f, 0.0f});
  SgdNesterov opt({p}, 0.9, 0.0);
  set_grad(p, {1.0f, 2.0f});
  opt.step(0.1);
  const auto st = opt.state(5);
  CHECK(st.next_epoch == 5);
  REQUIRE(st.velocities.size() == 1);
  CHECK(st.velocities[0].second == std::vector<float>{1.0f, 2.0f});

  auto q = single_param("w", {0.0f, 0.0f});
  SgdNesterov opt2({q}, 0.9, 0.0);
  opt2.restore(st);
  set_grad(q, {0.0f, 0.0f});
  opt2.step(0.1);  // velocity alone moves the weights: w -= lr*mu*(mu*v)
  CHECK(q.tensor.data()[0] != 0.0f);

  one::TrainerState bad = st;
  bad.velocities[0].first = "other";
  CHECK_THROWS_AS(opt2.restore(bad), one::DataError);
}

TEST_CASE("distillation loss with matching logits reduces to plain cross-entropy") {
  Rng rng(12);
  auto z = Tensor::randn({5, 7}, rng, 1.0, true);
  const std::vector<int> y{0, 3, 6, 2, 1};
  const auto lb = one::kd_loss(z, z, y, Temperature{3.0});
  CHECK(lb.kl == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(lb.total == doctest::Approx(lb.branch_ce[0]).epsilon(1e-7));

  // and a different teacher makes the objective strictly larger
  auto t = Tensor::randn({5, 7}, rng);
  const auto lb2 = one::kd_loss(z, t, y, Temperature{3.0});
  CHECK(lb2.kl > 0.0);
  CHECK(lb2.total > lb2.branch_ce[0]);
}

TEST_CASE("top-n ranking breaks ties by value then lowest index") {
  const float row[] = {1.0f, 3.0f, 3.0f, 0.0f};
  CHECK(one::topn_hit(row, 4, 1, 1));    // first of the tied pair wins top-1
  CHECK(!one::topn_hit(row, 4, 2, 1));   // second of the pair loses top-1
  CHECK(one::topn_hit(row, 4, 2, 2));    // but makes top-2
  CHECK(!one::topn_hit(row, 4, 0, 2));   // rank 2
  CHECK(one::topn_hit(row, 4, 0, 3));
  CHECK(one::topn_hit(row, 4, 3, 4));    // n = classes is always a hit
  CHECK(one::topn_hit(row, 4, 3, 9));
}

TEST_CASE("metrics CSV round-trips records exactly") {
  const std::string path =
      (fs::temp_directory_path() / ("one_metrics_" + std::to_string(::getpid()) + ".csv"))
          .string();

  std::vector<MetricsRecord> records;
  for (int e = 0; e < 3; ++e) {
    MetricsRecord r;
    r.epoch = e;
    r.phase = e % 2 ? "test" : "train";
    r.lr = 0.1;
    r.total = 1.25 + e;
    r.teacher_ce = 0.5;
    r.kl = 0.037;
    r.branch_ce = {0.4, 0.5, 0.6};
    r.branch_top1 = {55.5, 44.25, 33.333333333333336};
    r.branch_topn = {12.0, 11.0, 10.0};
    r.teacher_top1 = 30.0;
    r.teacher_topn = 8.0;
    r.wall_seconds = 123.0;  // excluded from files by design
    records.push_back(std::move(r));
  }
  one::write_metrics_csv(path, records, 3);
  auto back = one::read_metrics_csv(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    MetricsRecord want = records[i];
    want.wall_seconds = 0;  // never serialised
    CHECK(back[i] == want);
  }

  // the header carries the branch count
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == one::metrics_csv_header(3));
  CHECK(header.find("wall") == std::string::npos);

  fs::remove(path);
}

TEST_CASE("metrics CSV reader rejects malformed files") {
  const auto dir = fs::temp_directory_path();
  const std::string path =
      (dir / ("one_metrics_bad_" + std::to_string(::getpid()) + ".csv")).string();
  {
    std::ofstream out(path);
    out << "epoch,phase,mystery\n1,train,2\n";
  }
  CHECK_THROWS_AS(one::read_metrics_csv(path), one::DataError);
  {
    std::ofstream out(path);
    out << one::metrics_csv_header(1) << "\n0,train,0.1,1\n";
  }
  CHECK_THROWS_AS(one::read_metrics_csv(path), one::DataError);
  CHECK_THROWS_AS(one::read_metrics_csv(path + ".absent"), one::DataError);
  fs::remove(path);
}

TEST_CASE("ndjson mirror carries the same values as the CSV") {
  const std::string path =
      (fs::temp_directory_path() / ("one_metrics_" + std::to_string(::getpid()) + ".ndjson"))
          .string();
  MetricsRecord r;
  r.epoch = 4;
  r.phase = "test";
  r.lr = 0.01;
  r.total = 2.5;
  r.teacher_ce = 1.0;
  r.kl = 0.25;
  r.branch_ce = {1.0};
  r.branch_top1 = {20.0};
  r.branch_topn = {5.0};
  r.teacher_top1 = 19.0;
  r.teacher_topn = 4.0;
  one::write_metrics_ndjson(path, {r});

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line.find("\"epoch\":4") != std::string::npos);
  CHECK(line.find("\"phase\":\"test\"") != std::string::npos);
  CHECK(line.find("\"kl\":0.25") != std::string::npos);
  CHECK(line.find("wall") == std::string::npos);
  CHECK(!std::getline(in, line));
  fs::remove(path);
}

TEST_CASE("without distillation, other branches' CE terms contribute nothing to a branch") {
  Rng rng(9);
  auto model = one::build_model<float>(
      BlockSpec::parse("conv:3x3s1p1,bn,relu"),
      BlockSpec::parse("conv:3x3s1p1,bn,relu,gap,linear:auto"), 2, 4, {1, 6, 6}, rng);
  auto x = Tensor::randn({3, 1, 6, 6}, rng);
  const std::vector<int> y{0, 2, 3};

  std::vector<one::ParamRef> params;
  model.params(params);
  auto branch1_params = [&] {
    std::vector<one::ParamRef> out;
    for (auto& p : params)
      if (p.name.rfind("branch1.", 0) == 0) out.push_back(p);
    return out;
  }();
  REQUIRE(!branch1_params.empty());

  auto out = model.forward(x, one::Mode::Eval);
  // the other branches' CE terms alone: gradient at branch 1 must vanish
  auto other = one::add(one::softmax_cross_entropy(out.branch_logits[0], y),
                        one::softmax_cross_entropy(out.branch_logits[2], y));
  for (auto& p : params) p.tensor.zero_grad();
  other.backward();
  for (auto& p : branch1_params) {
    for (const float g : p.tensor.grad()) CHECK(g == 0.0f);
  }
}
