#include "one/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "one/checkpoint.hpp"
#include "one/trainer.hpp"

namespace one {

namespace {

std::vector<std::size_t> param_sizes(std::vector<ParamRef>& params) {
  std::vector<std::size_t> sizes;
  sizes.reserve(params.size());
  for (auto& p : params) sizes.push_back(p.tensor.size());
  return sizes;
}

struct ProbeMetrics {
  double train_ce, train_error, test_error;
};

ProbeMetrics probe(SingleNet& net, const Dataset& train, const Dataset& test, int batch_size) {
  TrainConfig cfg;
  cfg.batch_size = batch_size;
  cfg.top_n = std::min(cfg.top_n, net.num_classes());
  const auto train_rec = evaluate_net(net, train, cfg, "train");
  const auto test_rec = evaluate_net(net, test, cfg, "test");
  return {train_rec.branch_ce[0], train_rec.branch_top1[0], test_rec.branch_top1[0]};
}

void collect_probs(std::vector<std::vector<float>>& heads, const std::vector<Tensor>& logits) {
  for (std::size_t h = 0; h < logits.size(); ++h) {
    const auto p = softmax(logits[h]);
    heads[h].insert(heads[h].end(), p.data().begin(), p.data().end());
  }
}

// Runs every head over the fixed variance subset and hands the probability
// matrices to the pairwise distance kernel.
template <class ForwardAll>
double variance_over_subset(const Dataset& train, int batch_size, int head_count, int classes,
                            ForwardAll&& forward_all) {
  if (batch_size < 1) throw ConfigError("prediction variance: batch size must be positive");
  const int take = std::min(kVarianceSampleCount, train.n);
  Dataset holder;
  const Dataset* sample = &train;
  if (take < train.n) {
    holder = subset(train, take, kVarianceSubsetSeed);
    sample = &holder;
  }

  NoGradGuard guard;
  std::vector<std::vector<float>> heads(static_cast<std::size_t>(head_count));
  for (int start = 0; start < sample->n; start += batch_size) {
    const int n = std::min(batch_size, sample->n - start);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    auto [images, labels] = make_batch(*sample, idx);
    (void)labels;
    forward_all(heads, images);
  }
  return prediction_variance(heads, classes);
}

}  // namespace

std::vector<double> default_magnitude_grid() {
  std::vector<double> grid(11);
  for (int i = 0; i < 11; ++i) grid[static_cast<std::size_t>(i)] = 5.0 * i / 10.0;
  return grid;
}

std::vector<std::vector<float>> sample_unit_direction(const std::vector<std::size_t>& sizes,
                                                      Rng& rng) {
  std::vector<std::vector<float>> slices;
  slices.reserve(sizes.size());
  double sumsq = 0.0;
  std::size_t total = 0;
  for (const std::size_t size : sizes) {
    std::vector<float> slice(size);
    for (float& v : slice) {
      v = static_cast<float>(rng.next_normal());
      sumsq += static_cast<double>(v) * static_cast<double>(v);
    }
    total += size;
    slices.push_back(std::move(slice));
  }
  if (total == 0) throw DomainError("sample_unit_direction: no parameters to point along");
  const double norm = std::sqrt(sumsq);
  if (norm == 0.0) throw DomainError("sample_unit_direction: degenerate zero draw");
  for (auto& slice : slices)
    for (float& v : slice) v = static_cast<float>(v / norm);
  return slices;
}

RobustnessReport perturb_and_eval(SingleNet& net, const PerturbationSpec& spec,
                                  const Dataset& train, const Dataset& test, int batch_size) {
  if (spec.directions < 1) throw ConfigError("perturbation: need at least one direction");
  if (spec.magnitudes.empty()) throw ConfigError("perturbation: need at least one magnitude");
  for (const double d : spec.magnitudes)
    if (!(d >= 0.0)) throw ConfigError("perturbation: magnitudes must be >= 0");

  std::vector<ParamRef> params;
  net.params(params);
  const auto sizes = param_sizes(params);

  std::vector<std::vector<float>> original;
  original.reserve(params.size());
  for (auto& p : params) original.push_back(p.tensor.data());

  std::vector<std::vector<std::vector<float>>> directions;
  directions.reserve(static_cast<std::size_t>(spec.directions));
  for (int j = 0; j < spec.directions; ++j) {
    Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(j));
    directions.push_back(sample_unit_direction(sizes, rng));
  }

  const auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.data() = original[i];
  };

  // The unperturbed point is evaluated once; every d=0 row repeats it so the
  // baseline is bit-exact by construction.
  bool have_baseline = false;
  ProbeMetrics baseline{};

  RobustnessReport report;
  report.rows.reserve(spec.magnitudes.size() * static_cast<std::size_t>(spec.directions));
  for (const double d : spec.magnitudes) {
    for (int j = 0; j < spec.directions; ++j) {
      RobustnessRow row;
      row.d = d;
      row.direction = j;
      if (d == 0.0) {
        if (!have_baseline) {
          baseline = probe(net, train, test, batch_size);
          have_baseline = true;
        }
        row.train_ce = baseline.train_ce;
        row.train_error = baseline.train_error;
        row.test_error = baseline.test_error;
      } else {
        const auto& dir = directions[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& data = params[i].tensor.data();
          const auto& base = original[i];
          const auto& slice = dir[i];
          for (std::size_t k = 0; k < data.size(); ++k)
            data[k] = static_cast<float>(static_cast<double>(base[k]) +
                                         d * static_cast<double>(slice[k]));
        }
        try {
          const auto m = probe(net, train, test, batch_size);
          row.train_ce = m.train_ce;
          row.train_error = m.train_error;
          row.test_error = m.test_error;
        } catch (const NumericError&) {
          const double nan = std::numeric_limits<double>::quiet_NaN();
          row.train_ce = nan;
          row.train_error = nan;
          row.test_error = nan;
        } catch (...) {
          restore();
          throw;
        }
        restore();
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

RobustnessReport perturb_checkpoint(const std::string& checkpoint_path,
                                    const PerturbationSpec& spec, const Dataset& train,
                                    const Dataset& test, int batch_size) {
  const auto meta = peek_checkpoint(checkpoint_path);
  if (meta.kind == CheckpointKind::Multi) {
    auto model = load_multi_checkpoint(checkpoint_path);
    auto net = model.strip();
    return perturb_and_eval(net, spec, train, test, batch_size);
  }
  auto net = load_single_checkpoint(checkpoint_path);
  return perturb_and_eval(net, spec, train, test, batch_size);
}

void write_robustness_csv(const std::string& path, const RobustnessReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write robustness report: " + path);
  out << "d,direction,train_ce,train_error,test_error\n";
  for (const auto& row : report.rows) {
    out << format_double(row.d) << ',' << row.direction << ',' << format_double(row.train_ce)
        << ',' << format_double(row.train_error) << ',' << format_double(row.test_error) << '\n';
  }
  if (!out.good()) throw DataError("failed writing robustness report: " + path);
}

double prediction_variance(const std::vector<std::vector<float>>& head_probs, int classes) {
  if (head_probs.size() < 2)
    throw ConfigError("prediction variance: need at least 2 heads, got " +
                      std::to_string(head_probs.size()));
  if (classes < 1) throw ConfigError("prediction variance: class count must be positive");
  const std::size_t len = head_probs[0].size();
  for (const auto& h : head_probs)
    if (h.size() != len)
      throw ShapeError("prediction variance: heads disagree on prediction count");
  if (len == 0 || len % static_cast<std::size_t>(classes) != 0)
    throw ShapeError("prediction variance: predictions are not n x " + std::to_string(classes));

  const std::size_t n = len / static_cast<std::size_t>(classes);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < head_probs.size(); ++a) {
    for (std::size_t b = a + 1; b < head_probs.size(); ++b) {
      ++pairs;
      for (std::size_t i = 0; i < n; ++i) {
        double sumsq = 0.0;
        const std::size_t off = i * static_cast<std::size_t>(classes);
        for (int c = 0; c < classes; ++c) {
          const double diff = static_cast<double>(head_probs[a][off + static_cast<std::size_t>(c)]) -
                              static_cast<double>(head_probs[b][off + static_cast<std::size_t>(c)]);
          sumsq += diff * diff;
        }
        total += std::sqrt(sumsq);
      }
    }
  }
  return total / (static_cast<double>(pairs) * static_cast<double>(n));
}

double branch_variance(MultiBranchModel& model, const Dataset& train, int batch_size) {
  return variance_over_subset(
      train, batch_size, model.num_branches(), model.num_classes(),
      [&](std::vector<std::vector<float>>& heads, const Tensor& images) {
        const auto out = model.forward(images, Mode::Eval);
        collect_probs(heads, out.branch_logits);
      });
}

double ensemble_variance(std::vector<SingleNet>& nets, const Dataset& train, int batch_size) {
  return variance_over_subset(
      train, batch_size, static_cast<int>(nets.size()),
      nets.empty() ? 0 : nets[0].num_classes(),
      [&](std::vector<std::vector<float>>& heads, const Tensor& images) {
        std::vector<Tensor> logits;
        logits.reserve(nets.size());
        for (auto& net : nets) logits.push_back(net.forward(images, Mode::Eval));
        collect_probs(heads, logits);
      });
}

Stat mean_std(const std::vector<double>& xs) {
  Stat s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double sum = 0.0;
  for (const double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return s;
  double var = 0.0;
  for (const double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size() - 1));
  return s;
}

std::vector<SummaryRow> aggregate_metrics(const std::vector<std::string>& csv_paths) {
  if (csv_paths.empty()) throw ConfigError("aggregate: no metrics files given");

  std::vector<MetricsRecord> finals;
  finals.reserve(csv_paths.size());
  for (const auto& path : csv_paths) {
    const auto records = read_metrics_csv(path);
    const MetricsRecord* last_test = nullptr;
    for (const auto& r : records)
      if (r.phase == "test") last_test = &r;
    if (!last_test) throw DataError(path + ": no test-phase records to aggregate");
    if (!finals.empty() && finals[0].branch_ce.size() != last_test->branch_ce.size())
      throw DataError(path + ": branch count differs from earlier metrics files");
    finals.push_back(*last_test);
  }

  const std::size_t branches = finals[0].branch_ce.size();
  std::vector<SummaryRow> rows;
  const auto add = [&](const std::string& key, auto&& pick) {
    std::vector<double> values;
    values.reserve(finals.size());
    for (const auto& r : finals) values.push_back(pick(r));
    rows.push_back({key, mean_std(values)});
  };

  add("total", [](const MetricsRecord& r) { return r.total; });
  add("teacher_ce", [](const MetricsRecord& r) { return r.teacher_ce; });
  add("kl", [](const MetricsRecord& r) { return r.kl; });
  for (std::size_t b = 0; b < branches; ++b) {
    add("branch_ce_" + std::to_string(b),
        [b](const MetricsRecord& r) { return r.branch_ce[b]; });
  }
  for (std::size_t b = 0; b < branches; ++b) {
    add("branch_top1_" + std::to_string(b),
        [b](const MetricsRecord& r) { return r.branch_top1[b]; });
  }
  for (std::size_t b = 0; b < branches; ++b) {
    add("branch_topn_" + std::to_string(b),
        [b](const MetricsRecord& r) { return r.branch_topn[b]; });
  }
  add("teacher_top1", [](const MetricsRecord& r) { return r.teacher_top1; });
  add("teacher_topn", [](const MetricsRecord& r) { return r.teacher_topn; });
  return rows;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write summary: " + path);
  out << "key,mean,stddev,n\n";
  for (const auto& row : rows) {
    out << row.key << ',' << format_double(row.stat.mean) << ',' << format_double(row.stat.stddev)
        << ',' << row.stat.n << '\n';
  }
  if (!out.good()) throw DataError("failed writing summary: " + path);
}

}  // namespace one
