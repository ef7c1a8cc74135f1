#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "one/checkpoint.hpp"

using one::BlockSpec;
using one::CheckpointKind;
using one::FeatDims;
using one::Mode;
using one::ModelOptions;
using one::MultiBranchModel;
using one::Rng;
using one::SingleNet;
using one::Tensor;
using one::TrainerState;

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("one_ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const char* name) const { return (dir / name).string(); }
};

MultiBranchModel tiny_model(std::uint64_t seed, ModelOptions opts = {}) {
  Rng rng(seed);
  return one::build_model<float>(BlockSpec::parse("conv:4x3s1p1,bn,relu"),
                                 BlockSpec::parse("conv:4x3s1p1,bn,relu,gap,linear:auto"), 2, 5,
                                 {1, 8, 8}, rng, opts);
}

std::vector<float> all_param_bytes(MultiBranchModel& model) {
  std::vector<one::ParamRef> ps;
  model.params(ps);
  std::vector<float> flat;
  for (auto& p : ps) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
  std::vector<one::BufferRef> bs;
  model.buffers(bs);
  for (auto& b : bs) flat.insert(flat.end(), b.data->begin(), b.data->end());
  return flat;
}

}  // namespace

TEST_CASE("multi-branch round-trip restores every parameter and buffer bit") {
  Scratch scratch;
  auto model = tiny_model(7);

  // dirty the batchnorm running stats so buffers are non-default
  Rng xr(3);
  auto x = Tensor::randn({4, 1, 8, 8}, xr);
  model.forward(x, Mode::Train);

  const auto before = all_param_bytes(model);
  one::save_checkpoint(scratch.file("m.ckpt"), model);
  auto loaded = one::load_multi_checkpoint(scratch.file("m.ckpt"));
  auto after = all_param_bytes(loaded);

  REQUIRE(before.size() == after.size());
  CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0);
  CHECK(loaded.aux_count() == 2);
  CHECK(loaded.num_classes() == 5);

  // outputs agree bit-exactly in eval mode
  one::NoGradGuard ng;
  auto a = model.forward(x, Mode::Eval);
  auto b = loaded.forward(x, Mode::Eval);
  CHECK(a.teacher_logits.data() == b.teacher_logits.data());
  for (int i = 0; i < 3; ++i)
    CHECK(a.branch_logits[static_cast<std::size_t>(i)].data() ==
          b.branch_logits[static_cast<std::size_t>(i)].data());
}

TEST_CASE("single net round-trip preserves forward outputs bit-exactly") {
  Scratch scratch;
  auto model = tiny_model(11);
  Rng xr(5);
  auto x = Tensor::randn({6, 1, 8, 8}, xr);
  model.forward(x, Mode::Train);  // dirty bn stats

  auto net = model.strip();
  one::NoGradGuard ng;
  auto want = net.forward(x, Mode::Eval);

  one::save_checkpoint(scratch.file("s.ckpt"), net);
  auto loaded = one::load_single_checkpoint(scratch.file("s.ckpt"));
  auto got = loaded.forward(x, Mode::Eval);
  CHECK(want.data() == got.data());
}

TEST_CASE("save and load repeated twice produces identical files") {
  Scratch scratch;
  auto model = tiny_model(19);
  one::save_checkpoint(scratch.file("a.ckpt"), model);
  auto loaded = one::load_multi_checkpoint(scratch.file("a.ckpt"));
  one::save_checkpoint(scratch.file("b.ckpt"), loaded);

  std::ifstream fa(scratch.file("a.ckpt"), std::ios::binary);
  std::ifstream fb(scratch.file("b.ckpt"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

TEST_CASE("peek reads header without loading tensors") {
  Scratch scratch;
  ModelOptions opts;
  opts.no_sharing = true;
  auto model = tiny_model(23, opts);
  one::save_checkpoint(scratch.file("m.ckpt"), model);

  const auto meta = one::peek_checkpoint(scratch.file("m.ckpt"));
  CHECK(meta.kind == CheckpointKind::Multi);
  CHECK(meta.m == 2);
  CHECK(meta.classes == 5);
  CHECK(meta.options.no_sharing);
  CHECK(!meta.options.no_gating);
  CHECK(!meta.has_trainer_state);
  CHECK(meta.input_dims == FeatDims{1, 8, 8});
  CHECK(meta.trunk_spec == "conv:4x3s1p1,bn,relu");
}

TEST_CASE("trainer state rides along for resumption") {
  Scratch scratch;
  auto model = tiny_model(29);
  TrainerState state;
  state.next_epoch = 13;
  std::vector<one::ParamRef> ps;
  model.params(ps);
  for (auto& p : ps) {
    std::vector<float> vel(static_cast<std::size_t>(p.tensor.size()), 0.25f);
    state.velocities.emplace_back(p.name, std::move(vel));
  }
  one::save_checkpoint(scratch.file("m.ckpt"), model, &state);

  CHECK(one::peek_checkpoint(scratch.file("m.ckpt")).has_trainer_state);
  TrainerState back;
  auto loaded = one::load_multi_checkpoint(scratch.file("m.ckpt"), &back);
  CHECK(back.next_epoch == 13);
  REQUIRE(back.velocities.size() == ps.size());
  CHECK(back.velocities[0].first == ps[0].name);
  CHECK(back.velocities[0].second[0] == 0.25f);

  // asking to resume from a weights-only checkpoint is an error
  one::save_checkpoint(scratch.file("plain.ckpt"), model);
  TrainerState unused;
  CHECK_THROWS_AS(one::load_multi_checkpoint(scratch.file("plain.ckpt"), &unused),
                  one::DataError);
}

TEST_CASE("kind mismatch and corruption are rejected with clear errors") {
  Scratch scratch;
  auto model = tiny_model(31);
  one::save_checkpoint(scratch.file("m.ckpt"), model);
  auto net = model.strip();
  one::save_checkpoint(scratch.file("s.ckpt"), net);

  CHECK_THROWS_AS(one::load_single_checkpoint(scratch.file("m.ckpt")), one::DataError);
  CHECK_THROWS_AS(one::load_multi_checkpoint(scratch.file("s.ckpt")), one::DataError);
  CHECK_THROWS_AS(one::load_multi_checkpoint(scratch.file("absent.ckpt")), one::DataError);

  // flip a header byte: arch hash check trips
  {
    std::fstream f(scratch.file("m.ckpt"), std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(25);  // inside the m field
    const char b = 9;
    f.write(&b, 1);
  }
  CHECK_THROWS_AS(one::load_multi_checkpoint(scratch.file("m.ckpt")), one::DataError);

  // not a checkpoint at all
  {
    std::ofstream f(scratch.file("junk.ckpt"), std::ios::binary);
    f << "definitely not a checkpoint";
  }
  try {
    one::load_multi_checkpoint(scratch.file("junk.ckpt"));
    FAIL("expected DataError");
  } catch (const one::DataError& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }

  // truncated tensor section
  one::save_checkpoint(scratch.file("t.ckpt"), model);
  const auto full = fs::file_size(scratch.file("t.ckpt"));
  fs::resize_file(scratch.file("t.ckpt"), full - 10);
  try {
    one::load_multi_checkpoint(scratch.file("t.ckpt"));
    FAIL("expected DataError");
  } catch (const one::DataError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("architecture hash separates structurally different networks") {
  const auto base = one::arch_hash(CheckpointKind::Multi, "conv:4x3s1p1", "linear:auto", 2, 10,
                                   {1, 8, 8}, {});
  CHECK(base == one::arch_hash(CheckpointKind::Multi, "conv:4x3s1p1", "linear:auto", 2, 10,
                               {1, 8, 8}, {}));
  CHECK(base != one::arch_hash(CheckpointKind::Single, "conv:4x3s1p1", "linear:auto", 2, 10,
                               {1, 8, 8}, {}));
  CHECK(base != one::arch_hash(CheckpointKind::Multi, "conv:8x3s1p1", "linear:auto", 2, 10,
                               {1, 8, 8}, {}));
  CHECK(base != one::arch_hash(CheckpointKind::Multi, "conv:4x3s1p1", "linear:auto", 3, 10,
                               {1, 8, 8}, {}));
  ModelOptions opts;
  opts.no_gating = true;
  CHECK(base != one::arch_hash(CheckpointKind::Multi, "conv:4x3s1p1", "linear:auto", 2, 10,
                               {1, 8, 8}, opts));
}
