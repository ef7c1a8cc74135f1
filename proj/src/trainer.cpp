#include "one/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>

#include "one/flops.hpp"

namespace fs = std::filesystem;

namespace one {

double lr_at(int epoch, int epochs, double base_lr) {
  if (epochs < 1) throw ConfigError("lr schedule: epochs must be >= 1");
  if (epoch < 0 || epoch >= epochs) {
    throw ConfigError("lr schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(epochs) + ")");
  }
  const int half = (epochs + 1) / 2;            // ceil(epochs/2)
  const int three_quarters = (3 * epochs + 3) / 4;  // ceil(3*epochs/4)
  if (epoch >= three_quarters) return base_lr * 0.01;
  if (epoch >= half) return base_lr * 0.1;
  return base_lr;
}

SgdNesterov::SgdNesterov(std::vector<ParamRef> params, double momentum, double weight_decay)
    : params_(std::move(params)), mu_(momentum), wd_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto& p : params_) velocity_.emplace_back(p.tensor.data().size(), 0.0f);
}

void SgdNesterov::step(double lr) {
  const float mu = static_cast<float>(mu_);
  const float wd = static_cast<float>(wd_);
  const float eta = static_cast<float>(lr);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k].tensor.data();
    const auto& g = params_[k].tensor.grad();
    if (g.size() != w.size()) {
      throw NumericError("optimizer: parameter '" + params_[k].name +
                         "' has no gradient buffer; was backward() run?");
    }
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i];
      if (!std::isfinite(gi)) {
        throw NumericError("optimizer: non-finite gradient " + std::to_string(gi) + " in '" +
                           params_[k].name + "' at element " + std::to_string(i));
      }
      const float gw = gi + wd * w[i];
      v[i] = mu * v[i] + gw;
      w[i] -= eta * (gw + mu * v[i]);
    }
  }
}

TrainerState SgdNesterov::state(int next_epoch) const {
  TrainerState st;
  st.next_epoch = next_epoch;
  for (std::size_t k = 0; k < params_.size(); ++k)
    st.velocities.emplace_back(params_[k].name, velocity_[k]);
  return st;
}

void SgdNesterov::restore(const TrainerState& st) {
  if (st.velocities.size() != params_.size()) {
    throw DataError("optimizer: trainer state has " + std::to_string(st.velocities.size()) +
                    " velocity buffers, model has " + std::to_string(params_.size()) +
                    " parameters");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& [name, vel] = st.velocities[k];
    if (name != params_[k].name || vel.size() != velocity_[k].size()) {
      throw DataError("optimizer: trainer state entry '" + name + "' does not match parameter '" +
                      params_[k].name + "'");
    }
    velocity_[k] = vel;
  }
}

LossBreakdown kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const std::vector<int>& y, Temperature T) {
  LossBreakdown out;
  auto ce = softmax_cross_entropy(student_logits, y);
  out.branch_ce.push_back(ce.item());
  out.teacher_ce = ce.item();

  auto teacher_soft = soft_targets(teacher_logits.detach(), T);
  auto student_soft = soft_targets(student_logits, T);
  auto kl = kl_divergence(teacher_soft, student_soft);
  out.kl = kl.item();

  auto total = add(ce, scale(kl, static_cast<float>(T.value * T.value)));
  out.total = total.item();
  out.total_tensor = total;
  return out;
}

bool topn_hit(const float* row, int classes, int label, int n) {
  if (n >= classes) return true;
  // rank = entries scoring higher, plus equal scores at lower index; the label
  // is a hit when its rank lands inside the first n slots
  const float s = row[label];
  int rank = 0;
  for (int c = 0; c < classes; ++c) {
    if (row[c] > s || (row[c] == s && c < label)) ++rank;
  }
  return rank < n;
}

namespace {

// Sample-weighted accumulation of one epoch's losses and hit counts.
struct EpochAccum {
  int B, C, topn;
  std::int64_t samples = 0;
  std::vector<std::int64_t> hits1, hitsn;
  std::int64_t teacher1 = 0, teachern = 0;
  double total = 0, tce = 0, kl = 0;
  std::vector<double> bce;

  EpochAccum(int branches, int classes, int top_n)
      : B(branches), C(classes), topn(top_n), hits1(branches, 0), hitsn(branches, 0),
        bce(branches, 0) {}

  void add(const ForwardOutputs& out, const LossBreakdown& lb, const std::vector<int>& y) {
    const int take = static_cast<int>(y.size());
    samples += take;
    total += lb.total * take;
    tce += lb.teacher_ce * take;
    kl += lb.kl * take;
    for (int b = 0; b < B; ++b) {
      bce[static_cast<std::size_t>(b)] += lb.branch_ce[static_cast<std::size_t>(b)] * take;
      const float* logits = out.branch_logits[static_cast<std::size_t>(b)].data().data();
      for (int i = 0; i < take; ++i) {
        const float* row = logits + static_cast<std::size_t>(i) * C;
        const int label = y[static_cast<std::size_t>(i)];
        if (topn_hit(row, C, label, 1)) ++hits1[static_cast<std::size_t>(b)];
        if (topn_hit(row, C, label, topn)) ++hitsn[static_cast<std::size_t>(b)];
      }
    }
    const float* tl = out.teacher_logits.data().data();
    for (int i = 0; i < take; ++i) {
      const float* row = tl + static_cast<std::size_t>(i) * C;
      const int label = y[static_cast<std::size_t>(i)];
      if (topn_hit(row, C, label, 1)) ++teacher1;
      if (topn_hit(row, C, label, topn)) ++teachern;
    }
  }

  MetricsRecord finish(int epoch, std::string phase, double lr) const {
    MetricsRecord r;
    r.epoch = epoch;
    r.phase = std::move(phase);
    r.lr = lr;
    const double n = samples > 0 ? static_cast<double>(samples) : 1.0;
    r.total = total / n;
    r.teacher_ce = tce / n;
    r.kl = kl / n;
    for (int b = 0; b < B; ++b) {
      r.branch_ce.push_back(bce[static_cast<std::size_t>(b)] / n);
      r.branch_top1.push_back(100.0 * (1.0 - hits1[static_cast<std::size_t>(b)] / n));
      r.branch_topn.push_back(100.0 * (1.0 - hitsn[static_cast<std::size_t>(b)] / n));
    }
    r.teacher_top1 = 100.0 * (1.0 - teacher1 / n);
    r.teacher_topn = 100.0 * (1.0 - teachern / n);
    return r;
  }
};

std::vector<int> chunk_indices(int start, int take) {
  std::vector<int> idx(static_cast<std::size_t>(take));
  std::iota(idx.begin(), idx.end(), start);
  return idx;
}

void check_pair(const Dataset& train, const Dataset& test) {
  if (train.channels != test.channels || train.height != test.height ||
      train.width != test.width || train.class_count != test.class_count) {
    throw DataError("train and test splits disagree on feature shape or class count");
  }
  if (train.n < 2) throw DataError("train split needs at least 2 samples");
}

void check_arch_against_config(const TrainConfig& cfg, const std::string& trunk,
                               const std::string& branch) {
  if (BlockSpec::parse(cfg.trunk).to_string() != trunk ||
      BlockSpec::parse(cfg.branch).to_string() != branch) {
    throw ConfigError("resume checkpoint architecture does not match the config");
  }
}

void write_run_files(const std::string& out_dir, const std::vector<MetricsRecord>& metrics,
                     int branches) {
  fs::create_directories(out_dir);
  write_metrics_csv(out_dir + "/metrics.csv", metrics, branches);
  write_metrics_ndjson(out_dir + "/metrics.ndjson", metrics);
}

std::vector<MetricsRecord> reload_prior_metrics(const std::string& out_dir, int start_epoch) {
  std::vector<MetricsRecord> kept;
  if (out_dir.empty()) return kept;
  const std::string path = out_dir + "/metrics.csv";
  if (!fs::exists(path)) return kept;
  for (auto& r : read_metrics_csv(path)) {
    if (r.epoch < start_epoch) kept.push_back(std::move(r));
  }
  return kept;
}

// Per-epoch optimisation cost; trailing batches of one sample are skipped by
// the loop and therefore not booked.
std::int64_t epoch_train_flops(std::int64_t fwd_per_sample, int n, int batch_size) {
  std::int64_t total = static_cast<std::int64_t>(n / batch_size) *
                       train_step_flops(fwd_per_sample, batch_size);
  const int rem = n % batch_size;
  if (rem >= 2) total += train_step_flops(fwd_per_sample, rem);
  return total;
}

}  // namespace

MetricsRecord evaluate_model(MultiBranchModel& model, const Dataset& ds, const TrainConfig& cfg,
                             const std::string& phase) {
  NoGradGuard ng;
  const int C = model.num_classes();
  DistillFlags flags;
  flags.no_distill = cfg.no_distill;
  EpochAccum acc(model.num_branches(), C, cfg.top_n);
  for (int start = 0; start < ds.n; start += cfg.batch_size) {
    const int take = std::min(cfg.batch_size, ds.n - start);
    auto [x, y] = make_batch(ds, chunk_indices(start, take));
    auto out = model.forward(x, Mode::Eval);
    const auto lb = total_loss(out, y, Temperature{cfg.temperature}, flags);
    acc.add(out, lb, y);
  }
  return acc.finish(0, phase, 0.0);
}

MetricsRecord evaluate_net(SingleNet& net, const Dataset& ds, const TrainConfig& cfg,
                           const std::string& phase) {
  NoGradGuard ng;
  const int C = net.num_classes();
  EpochAccum acc(1, C, cfg.top_n);
  for (int start = 0; start < ds.n; start += cfg.batch_size) {
    const int take = std::min(cfg.batch_size, ds.n - start);
    auto [x, y] = make_batch(ds, chunk_indices(start, take));
    auto logits = net.forward(x, Mode::Eval);
    auto ce = softmax_cross_entropy(logits, y);
    LossBreakdown lb;
    lb.branch_ce.push_back(ce.item());
    lb.teacher_ce = ce.item();
    lb.total = ce.item();
    ForwardOutputs out;
    out.branch_logits.push_back(logits);
    out.teacher_logits = logits;
    acc.add(out, lb, y);
  }
  return acc.finish(0, phase, 0.0);
}

void ensemble_errors(std::vector<SingleNet>& nets, const Dataset& ds, int batch_size, int top_n,
                     double& top1_error, double& topn_error) {
  if (nets.empty()) throw ConfigError("ensemble evaluation needs at least one net");
  NoGradGuard ng;
  const int C = ds.class_count;
  std::int64_t hits1 = 0, hitsn = 0;
  for (int start = 0; start < ds.n; start += batch_size) {
    const int take = std::min(batch_size, ds.n - start);
    auto [x, y] = make_batch(ds, chunk_indices(start, take));
    std::vector<float> avg(static_cast<std::size_t>(take) * C, 0.0f);
    for (auto& net : nets) {
      const auto probs = softmax(net.forward(x, Mode::Eval));
      const auto& p = probs.data();
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
    }
    const float inv = 1.0f / static_cast<float>(nets.size());
    for (auto& v : avg) v *= inv;
    for (int i = 0; i < take; ++i) {
      const float* row = avg.data() + static_cast<std::size_t>(i) * C;
      if (topn_hit(row, C, y[static_cast<std::size_t>(i)], 1)) ++hits1;
      if (topn_hit(row, C, y[static_cast<std::size_t>(i)], top_n)) ++hitsn;
    }
  }
  const double n = static_cast<double>(ds.n);
  top1_error = 100.0 * (1.0 - hits1 / n);
  topn_error = 100.0 * (1.0 - hitsn / n);
}

OneTrainResult train_one(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                         const std::string& out_dir, const std::string& resume_from) {
  validate(cfg);
  check_pair(train, test);
  if (cfg.top_n > train.class_count)
    throw ConfigError("config: top_n exceeds the dataset's class count");

  const auto trunk = BlockSpec::parse(cfg.trunk);
  const auto branch = BlockSpec::parse(cfg.branch);
  ModelOptions opts;
  opts.no_gating = cfg.no_gating;
  opts.no_sharing = cfg.no_sharing;
  const FeatDims in_dims{train.channels, train.height, train.width};
  const int C = train.class_count;
  const int B = cfg.branches + 1;

  int start_epoch = 0;
  std::optional<MultiBranchModel> model;
  std::optional<TrainerState> resume_state;
  if (!resume_from.empty()) {
    TrainerState st;
    model.emplace(load_multi_checkpoint(resume_from, &st));
    check_arch_against_config(cfg, model->trunk_spec().to_string(),
                              model->branch_spec().to_string());
    if (model->aux_count() != cfg.branches) {
      throw ConfigError("resume checkpoint branch count does not match the config");
    }
    start_epoch = st.next_epoch;
    resume_state = std::move(st);
  } else {
    Rng rng(cfg.seed);
    model.emplace(build_model<float>(trunk, branch, cfg.branches, C, in_dims, rng, opts));
  }

  std::vector<ParamRef> params;
  model->params(params);
  SgdNesterov opt(params, cfg.momentum, cfg.weight_decay);
  if (resume_state) opt.restore(*resume_state);

  std::vector<MetricsRecord> metrics = reload_prior_metrics(out_dir, start_epoch);

  const std::int64_t fwd = model_forward_flops(trunk, branch, cfg.branches, C, in_dims, opts);
  const Temperature T{cfg.temperature};
  DistillFlags flags;
  flags.no_distill = cfg.no_distill;
  flags.kl_backprop_teacher = cfg.kl_backprop_teacher;
  AugmentSpec aug;
  if (cfg.augment) {
    aug.random_crop = true;
    aug.hflip = true;
  }
  BatchIterator it(train, cfg.batch_size, cfg.seed, aug);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg.epochs, cfg.base_lr);
    it.start_epoch(epoch);
    EpochAccum acc(B, C, cfg.top_n);
    Batch b;
    int batch_index = -1;
    while (it.next(b)) {
      ++batch_index;
      if (b.images.dim(0) < 2) continue;  // batch statistics need >= 2 samples
      auto out = model->forward(b.images, Mode::Train);
      auto lb = total_loss(out, b.labels, T, flags);
      for (auto& p : params) p.tensor.zero_grad();
      lb.total_tensor.backward();
      try {
        opt.step(lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ")");
      }
      acc.add(out, lb, b.labels);
    }

    MetricsRecord tr = acc.finish(epoch, "train", lr);
    tr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.push_back(std::move(tr));

    MetricsRecord te = evaluate_model(*model, test, cfg, "test");
    te.epoch = epoch;
    te.lr = lr;
    metrics.push_back(std::move(te));

    if (!out_dir.empty()) {
      write_run_files(out_dir, metrics, B);
      const bool last = epoch + 1 == cfg.epochs;
      if (!last && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
        const TrainerState st = opt.state(epoch + 1);
        save_checkpoint(out_dir + "/checkpoint_epoch_" + std::to_string(epoch + 1) + ".ckpt",
                        *model, &st);
      }
      if (last) {
        const TrainerState st = opt.state(epoch + 1);
        save_checkpoint(out_dir + "/checkpoint.ckpt", *model, &st);
      }
    }
  }

  TrainArtifacts art;
  art.metrics = std::move(metrics);
  art.train_flops = epoch_train_flops(fwd, train.n, cfg.batch_size) * cfg.epochs;
  art.inference_flops = single_net_forward_flops(trunk, branch, in_dims, C);
  return OneTrainResult{std::move(*model), std::move(art)};
}

namespace {

// Shared single-net epoch loop; loss_fn maps (logits, labels) to a breakdown
// whose total_tensor is differentiable.
template <class LossFn>
VanillaTrainResult train_single_net(const TrainConfig& cfg, const Dataset& train,
                                    const Dataset& test, const std::string& out_dir,
                                    const std::string& resume_from, LossFn&& loss_fn,
                                    std::int64_t extra_flops_per_sample) {
  validate(cfg);
  check_pair(train, test);
  if (cfg.top_n > train.class_count)
    throw ConfigError("config: top_n exceeds the dataset's class count");

  const auto trunk = BlockSpec::parse(cfg.trunk);
  const auto branch = BlockSpec::parse(cfg.branch);
  const FeatDims in_dims{train.channels, train.height, train.width};
  const int C = train.class_count;

  int start_epoch = 0;
  std::optional<SingleNet> net;
  std::optional<TrainerState> resume_state;
  if (!resume_from.empty()) {
    TrainerState st;
    net.emplace(load_single_checkpoint(resume_from, &st));
    check_arch_against_config(cfg, net->trunk_spec().to_string(),
                              net->branch_spec().to_string());
    start_epoch = st.next_epoch;
    resume_state = std::move(st);
  } else {
    Rng rng(cfg.seed);
    net.emplace(trunk, branch, C, in_dims, rng);
  }

  std::vector<ParamRef> params;
  net->params(params);
  SgdNesterov opt(params, cfg.momentum, cfg.weight_decay);
  if (resume_state) opt.restore(*resume_state);

  std::vector<MetricsRecord> metrics = reload_prior_metrics(out_dir, start_epoch);

  const std::int64_t fwd = single_net_forward_flops(trunk, branch, in_dims, C);
  AugmentSpec aug;
  if (cfg.augment) {
    aug.random_crop = true;
    aug.hflip = true;
  }
  BatchIterator it(train, cfg.batch_size, cfg.seed, aug);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg.epochs, cfg.base_lr);
    it.start_epoch(epoch);
    EpochAccum acc(1, C, cfg.top_n);
    Batch b;
    int batch_index = -1;
    while (it.next(b)) {
      ++batch_index;
      if (b.images.dim(0) < 2) continue;
      auto logits = net->forward(b.images, Mode::Train);
      LossBreakdown lb = loss_fn(logits, b.images, b.labels);
      for (auto& p : params) p.tensor.zero_grad();
      lb.total_tensor.backward();
      try {
        opt.step(lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ")");
      }
      ForwardOutputs out;
      out.branch_logits.push_back(logits);
      out.teacher_logits = logits;
      acc.add(out, lb, b.labels);
    }

    MetricsRecord tr = acc.finish(epoch, "train", lr);
    tr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.push_back(std::move(tr));

    MetricsRecord te = evaluate_net(*net, test, cfg, "test");
    te.epoch = epoch;
    te.lr = lr;
    metrics.push_back(std::move(te));

    if (!out_dir.empty()) {
      write_run_files(out_dir, metrics, 1);
      const bool last = epoch + 1 == cfg.epochs;
      if (!last && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
        const TrainerState st = opt.state(epoch + 1);
        save_checkpoint(out_dir + "/checkpoint_epoch_" + std::to_string(epoch + 1) + ".ckpt",
                        *net, &st);
      }
      if (last) {
        const TrainerState st = opt.state(epoch + 1);
        save_checkpoint(out_dir + "/checkpoint.ckpt", *net, &st);
      }
    }
  }

  TrainArtifacts art;
  art.metrics = std::move(metrics);
  art.train_flops = epoch_train_flops(fwd, train.n, cfg.batch_size) * cfg.epochs;
  art.inference_flops = fwd;
  // teacher inference during distillation is booked per trained sample
  if (extra_flops_per_sample > 0) {
    const std::int64_t per_epoch_samples =
        static_cast<std::int64_t>(train.n / cfg.batch_size) * cfg.batch_size +
        ((train.n % cfg.batch_size) >= 2 ? train.n % cfg.batch_size : 0);
    art.train_flops += per_epoch_samples * extra_flops_per_sample * cfg.epochs;
  }
  return VanillaTrainResult{std::move(*net), std::move(art)};
}

}  // namespace

VanillaTrainResult train_vanilla(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                                 const std::string& out_dir, const std::string& resume_from) {
  return train_single_net(
      cfg, train, test, out_dir, resume_from,
      [](const Tensor& logits, const Tensor&, const std::vector<int>& y) {
        auto ce = softmax_cross_entropy(logits, y);
        LossBreakdown lb;
        lb.branch_ce.push_back(ce.item());
        lb.teacher_ce = ce.item();
        lb.total = ce.item();
        lb.total_tensor = ce;
        return lb;
      },
      0);
}

VanillaTrainResult train_kd_student(const TrainConfig& cfg, SingleNet& teacher,
                                    const Dataset& train, const Dataset& test,
                                    const std::string& out_dir) {
  const Temperature T{cfg.temperature};
  const std::int64_t teacher_fwd =
      single_net_forward_flops(teacher.trunk_spec(), teacher.branch_spec(), teacher.input_dims(),
                               teacher.num_classes());
  return train_single_net(
      cfg, train, test, out_dir, "",
      [&teacher, T](const Tensor& logits, const Tensor& images, const std::vector<int>& y) {
        Tensor teacher_logits;
        {
          NoGradGuard ng;
          teacher_logits = teacher.forward(images, Mode::Eval);
        }
        return kd_loss(logits, teacher_logits, y, T);
      },
      teacher_fwd);
}

KdTrainResult train_kd_offline(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                               const std::string& out_dir) {
  TrainConfig teacher_cfg = cfg;
  teacher_cfg.trunk = cfg.kd_teacher_trunk;
  teacher_cfg.branch = cfg.kd_teacher_branch;
  auto teacher = train_vanilla(teacher_cfg, train, test,
                               out_dir.empty() ? "" : out_dir + "/teacher");
  auto student = train_kd_student(cfg, teacher.net, train, test,
                                  out_dir.empty() ? "" : out_dir + "/student");
  KdTrainResult result{std::move(teacher.net), std::move(student.net),
                       std::move(teacher.art), std::move(student.art), 0};
  result.train_flops = result.teacher_art.train_flops + result.student_art.train_flops;
  return result;
}

EnsembleTrainResult train_indep_ensemble(const TrainConfig& cfg, int n, const Dataset& train,
                                         const Dataset& test, const std::string& out_dir) {
  if (n < 1) throw ConfigError("ensemble: member count must be >= 1");
  EnsembleTrainResult result;
  for (int k = 0; k < n; ++k) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
    auto member = train_vanilla(member_cfg, train, test,
                                out_dir.empty() ? "" : out_dir + "/member_" + std::to_string(k));
    result.train_flops += member.art.train_flops;
    result.member_art.push_back(std::move(member.art));
    result.nets.push_back(std::move(member.net));
  }
  ensemble_errors(result.nets, test, cfg.batch_size, cfg.top_n, result.ensemble_top1,
                  result.ensemble_topn);
  return result;
}

}  // namespace one
