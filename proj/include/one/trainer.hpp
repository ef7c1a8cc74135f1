#pragma once

// The training engine: epoch loop with SGD + Nesterov momentum, the staged
// learning-rate schedule, per-epoch train/test metrics, checkpoint cadence
// with bit-exact resume, and the baseline methods (vanilla single net,
// two-phase offline distillation, independent N-net ensemble).

#include <cstdint>
#include <string>
#include <vector>

#include "one/checkpoint.hpp"
#include "one/config.hpp"
#include "one/data.hpp"
#include "one/losses.hpp"
#include "one/metrics.hpp"
#include "one/model.hpp"

namespace one {

// Piecewise-constant schedule: base_lr until ceil(epochs/2), then a tenth,
// then a hundredth from ceil(3*epochs/4).
double lr_at(int epoch, int epochs, double base_lr);

class SgdNesterov {
 public:
  SgdNesterov(std::vector<ParamRef> params, double momentum, double weight_decay);

  // v <- mu*v + (g + wd*w); w <- w - lr*(g + wd*w + mu*v). Throws NumericError
  // naming the parameter if any gradient is non-finite.
  void step(double lr);

  TrainerState state(int next_epoch) const;
  void restore(const TrainerState& st);

 private:
  std::vector<ParamRef> params_;
  std::vector<std::vector<float>> velocity_;
  double mu_, wd_;
};

// Offline-distillation student objective: CE plus the T^2-weighted KL from
// the (detached) teacher's soft targets. Equals plain CE when the logits
// coincide.
LossBreakdown kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const std::vector<int>& y, Temperature T);

// Fraction helpers: top-n treats ties by value descending then index
// ascending, so results never depend on comparison order.
bool topn_hit(const float* row, int classes, int label, int n);

// Full-split evaluation in eval mode; fills every metrics field except epoch
// and wall time. Single-net records use the branch-0 columns and mirror them
// into the teacher columns.
MetricsRecord evaluate_model(MultiBranchModel& model, const Dataset& ds, const TrainConfig& cfg,
                             const std::string& phase);
MetricsRecord evaluate_net(SingleNet& net, const Dataset& ds, const TrainConfig& cfg,
                           const std::string& phase);

// Averaged-softmax ensemble prediction error over independently trained nets.
void ensemble_errors(std::vector<SingleNet>& nets, const Dataset& ds, int batch_size, int top_n,
                     double& top1_error, double& topn_error);

struct TrainArtifacts {
  std::vector<MetricsRecord> metrics;
  std::int64_t train_flops = 0;      // analytic cost of all optimisation steps
  std::int64_t inference_flops = 0;  // per sample in deployment form
};

struct OneTrainResult {
  MultiBranchModel model;
  TrainArtifacts art;
};

struct VanillaTrainResult {
  SingleNet net;
  TrainArtifacts art;
};

struct KdTrainResult {
  SingleNet teacher;
  SingleNet student;
  TrainArtifacts teacher_art;
  TrainArtifacts student_art;
  std::int64_t train_flops = 0;  // both phases plus teacher inference
};

struct EnsembleTrainResult {
  std::vector<SingleNet> nets;
  std::vector<TrainArtifacts> member_art;
  double ensemble_top1 = 0, ensemble_topn = 0;
  std::int64_t train_flops = 0;
};

// When out_dir is non-empty the run writes metrics.csv / metrics.ndjson and
// checkpoint files there (checkpoint.ckpt at the end, checkpoint_epoch_K.ckpt
// at the configured cadence). resume_from continues a run from a checkpoint
// that carries trainer state; the finished artifacts are bit-identical to an
// uninterrupted run with the same seed.
OneTrainResult train_one(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                         const std::string& out_dir = "", const std::string& resume_from = "");

VanillaTrainResult train_vanilla(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                                 const std::string& out_dir = "",
                                 const std::string& resume_from = "");

// Trains the configured teacher architecture first (vanilla objective), then
// the student against its soft targets.
KdTrainResult train_kd_offline(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                               const std::string& out_dir = "");

// Student phase alone, against an already trained teacher.
VanillaTrainResult train_kd_student(const TrainConfig& cfg, SingleNet& teacher,
                                    const Dataset& train, const Dataset& test,
                                    const std::string& out_dir = "");

// n independent vanilla runs with seeds cfg.seed, cfg.seed+1, ...; evaluation
// averages the member posteriors.
EnsembleTrainResult train_indep_ensemble(const TrainConfig& cfg, int n, const Dataset& train,
                                         const Dataset& test, const std::string& out_dir = "");

}  // namespace one
