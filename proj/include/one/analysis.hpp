#pragma once

// Post-training diagnostics: loss-landscape robustness under random parameter
// perturbations, prediction variance across heads, and cross-seed metric
// aggregation. All of it consumes trained nets or their artifacts; nothing
// here touches gradients.

#include <cstdint>
#include <string>
#include <vector>

#include "one/data.hpp"
#include "one/metrics.hpp"
#include "one/model.hpp"

namespace one {

// ---------------------------------------------------------------------------
// Parameter-space perturbation probe.
//
// Each probe replaces the weights with w + d * v for a direction v drawn
// uniformly on the unit sphere of the concatenated parameter space, evaluates
// train cross-entropy plus train/test error, and restores the original
// weights bit-exactly. Batchnorm running statistics are not perturbed; they
// are not optimisation variables.
// ---------------------------------------------------------------------------

// Eleven evenly spaced magnitudes covering [0, 5].
std::vector<double> default_magnitude_grid();

struct PerturbationSpec {
  std::vector<double> magnitudes = default_magnitude_grid();
  int directions = 5;
  std::uint64_t seed = 77;
};

struct RobustnessRow {
  double d = 0.0;
  int direction = 0;
  double train_ce = 0.0;
  double train_error = 0.0;  // percent
  double test_error = 0.0;   // percent
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;  // ordered by (magnitude index, direction)
};

// Standard normal draws, one slice per parameter tensor, scaled so the
// concatenated vector has unit L2 norm.
std::vector<std::vector<float>> sample_unit_direction(const std::vector<std::size_t>& sizes,
                                                      Rng& rng);

// Rows with non-finite metrics are kept; a numeric failure inside one probe
// yields a NaN row rather than aborting the report. The net's parameters are
// byte-identical before and after.
RobustnessReport perturb_and_eval(SingleNet& net, const PerturbationSpec& spec,
                                  const Dataset& train, const Dataset& test, int batch_size);

// Loads either checkpoint kind; a multi-branch checkpoint is stripped to its
// target branch first. The file itself is never written.
RobustnessReport perturb_checkpoint(const std::string& checkpoint_path,
                                    const PerturbationSpec& spec, const Dataset& train,
                                    const Dataset& test, int batch_size);

// CSV schema: d,direction,train_ce,train_error,test_error
void write_robustness_csv(const std::string& path, const RobustnessReport& report);

// ---------------------------------------------------------------------------
// Prediction variance: mean over samples and unordered head pairs of the
// euclidean distance between softmax outputs. Heads are either the branches
// of one model or separately trained nets; both run on the same fixed
// training subset so the two numbers are comparable.
// ---------------------------------------------------------------------------

inline constexpr int kVarianceSampleCount = 1000;
inline constexpr std::uint64_t kVarianceSubsetSeed = 424242;

// head_probs[h] holds row-major n*classes softmax probabilities for head h.
// Fewer than two heads is a ConfigError.
double prediction_variance(const std::vector<std::vector<float>>& head_probs, int classes);

double branch_variance(MultiBranchModel& model, const Dataset& train, int batch_size);
double ensemble_variance(std::vector<SingleNet>& nets, const Dataset& train, int batch_size);

// ---------------------------------------------------------------------------
// Cross-seed aggregation of final test metrics.
// ---------------------------------------------------------------------------

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 when n < 2
  int n = 0;
};

Stat mean_std(const std::vector<double>& xs);

struct SummaryRow {
  std::string key;
  Stat stat;
};

// Reads each metrics CSV, takes its final test-phase record, and aggregates
// every numeric column across files. All files must agree on branch count.
std::vector<SummaryRow> aggregate_metrics(const std::vector<std::string>& csv_paths);

// CSV schema: key,mean,stddev,n
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

}  // namespace one
