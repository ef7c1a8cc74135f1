#pragma once

// Per-epoch training and evaluation records plus their on-disk forms: a CSV
// with a fixed column order and a newline-delimited JSON mirror carrying the
// same fields. Wall-clock time stays in memory only, so files produced by
// identical runs are byte-identical.

#include <string>
#include <vector>

#include "one/error.hpp"

namespace one {

struct MetricsRecord {
  int epoch = 0;
  std::string phase;  // "train" or "test"
  double lr = 0;
  double total = 0;       // mean combined loss
  double teacher_ce = 0;  // gated-teacher CE (equals branch CE for single nets)
  double kl = 0;          // summed distillation term, 0 when disabled
  std::vector<double> branch_ce;
  std::vector<double> branch_top1, branch_topn;  // percent error in [0,100]
  double teacher_top1 = 0, teacher_topn = 0;
  double wall_seconds = 0;  // never serialised

  bool operator==(const MetricsRecord&) const = default;
};

// Header depends only on the branch count; every record must carry that many
// per-branch entries.
std::string metrics_csv_header(int branches);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       int branches);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

void write_metrics_ndjson(const std::string& path, const std::vector<MetricsRecord>& records);

}  // namespace one
