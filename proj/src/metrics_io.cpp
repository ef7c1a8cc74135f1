#include "one/metrics.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "one/config.hpp"

namespace one {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void check_branch_count(const MetricsRecord& r, std::size_t b) {
  if (r.branch_ce.size() != b || r.branch_top1.size() != b || r.branch_topn.size() != b) {
    throw DataError("metrics: record for epoch " + std::to_string(r.epoch) + " carries " +
                    std::to_string(r.branch_ce.size()) + " branch entries, writer configured for " +
                    std::to_string(b));
  }
}

}  // namespace

std::string metrics_csv_header(int branches) {
  std::string h = "epoch,phase,lr,total,teacher_ce,kl";
  for (int i = 0; i < branches; ++i) h += ",branch_ce_" + std::to_string(i);
  for (int i = 0; i < branches; ++i) h += ",branch_top1_" + std::to_string(i);
  for (int i = 0; i < branches; ++i) h += ",branch_topn_" + std::to_string(i);
  h += ",teacher_top1,teacher_topn";
  return h;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       int branches) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("metrics: cannot open '" + path + "' for writing");
  out << metrics_csv_header(branches) << '\n';
  for (const auto& r : records) {
    check_branch_count(r, static_cast<std::size_t>(branches));
    out << r.epoch << ',' << r.phase << ',' << format_double(r.lr) << ','
        << format_double(r.total) << ',' << format_double(r.teacher_ce) << ','
        << format_double(r.kl);
    for (const double v : r.branch_ce) out << ',' << format_double(v);
    for (const double v : r.branch_top1) out << ',' << format_double(v);
    for (const double v : r.branch_topn) out << ',' << format_double(v);
    out << ',' << format_double(r.teacher_top1) << ',' << format_double(r.teacher_topn) << '\n';
  }
  if (!out) throw DataError("metrics: write to '" + path + "' failed");
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("metrics: '" + path + "' is empty");

  // the per-branch column count is recovered from the header
  const auto header = split_csv_line(line);
  int branches = 0;
  for (const auto& col : header)
    if (col.rfind("branch_ce_", 0) == 0) ++branches;
  if (branches == 0 || header != split_csv_line(metrics_csv_header(branches))) {
    throw DataError("metrics: '" + path + "' has an unrecognised header");
  }

  std::vector<MetricsRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("metrics: '" + path + "' line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    MetricsRecord r;
    std::size_t i = 0;
    try {
      r.epoch = std::stoi(cells[i++]);
      r.phase = cells[i++];
      r.lr = std::stod(cells[i++]);
      r.total = std::stod(cells[i++]);
      r.teacher_ce = std::stod(cells[i++]);
      r.kl = std::stod(cells[i++]);
      for (int b = 0; b < branches; ++b) r.branch_ce.push_back(std::stod(cells[i++]));
      for (int b = 0; b < branches; ++b) r.branch_top1.push_back(std::stod(cells[i++]));
      for (int b = 0; b < branches; ++b) r.branch_topn.push_back(std::stod(cells[i++]));
      r.teacher_top1 = std::stod(cells[i++]);
      r.teacher_topn = std::stod(cells[i]);
    } catch (const std::exception&) {
      throw DataError("metrics: '" + path + "' line " + std::to_string(lineno) +
                      " has an unparsable cell");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_metrics_ndjson(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("metrics: cannot open '" + path + "' for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["phase"] = r.phase;
    j["lr"] = r.lr;
    j["total"] = r.total;
    j["teacher_ce"] = r.teacher_ce;
    j["kl"] = r.kl;
    j["branch_ce"] = r.branch_ce;
    j["branch_top1"] = r.branch_top1;
    j["branch_topn"] = r.branch_topn;
    j["teacher_top1"] = r.teacher_top1;
    j["teacher_topn"] = r.teacher_topn;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("metrics: write to '" + path + "' failed");
}

}  // namespace one
