// Command-line front end: resolves a config from presets, files and
// overrides, materialises the dataset (generating the synthetic stand-in on
// first use), then dispatches to the training, evaluation and analysis
// modules. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "one/analysis.hpp"
#include "one/checkpoint.hpp"
#include "one/config.hpp"
#include "one/manifest.hpp"
#include "one/synth.hpp"
#include "one/trainer.hpp"
#include "one/version.hpp"

namespace fs = std::filesystem;

using one::ConfigError;
using one::DataError;
using one::Dataset;
using one::TrainConfig;

namespace {

// Flags shared by every subcommand that needs a resolved config.
struct ConfigCli {
  std::string preset_name;
  std::string config_file;
  std::vector<std::string> sets;
  std::string data_root;
  std::string out_dir;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* root_opt = nullptr;

  void attach(CLI::App& cmd) {
    cmd.add_option("--preset", preset_name, "start from a named preset")
        ->check(CLI::IsMember(one::preset_names()));
    cmd.add_option("--config", config_file, "layer a config file on top of the preset/defaults");
    cmd.add_option("--set", sets, "override a single key, repeatable")->type_name("KEY=VALUE");
    root_opt = cmd.add_option("--data-root", data_root,
                              "dataset directory (overrides ONE_DATA_ROOT and the config)");
    seed_opt = cmd.add_option("--seed", seed, "override the run seed");
    out_opt = cmd.add_option("--out", out_dir, "override the output directory");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!preset_name.empty()) cfg = one::preset(preset_name);
    if (!config_file.empty()) cfg = one::load_config_file(config_file, cfg);
    for (const auto& pair : sets) one::apply_setting(cfg, pair);
    if (seed_opt && seed_opt->count() > 0) cfg.seed = seed;
    if (out_opt && out_opt->count() > 0) cfg.out_dir = out_dir;
    if (root_opt && root_opt->count() > 0) {
      cfg.data_root = data_root;
    } else if (const char* env = std::getenv("ONE_DATA_ROOT")) {
      cfg.data_root = env;
    }
    one::validate(cfg);
    return cfg;
  }
};

struct DataPair {
  Dataset train, test;
};

void generate_dataset(const std::string& dataset, const std::string& root, int train_n,
                      int test_n) {
  one::SynthSpec spec;
  if (dataset == "cifar10") spec.train_n = 50000;
  if (train_n > 0) spec.train_n = train_n;
  if (test_n > 0) spec.test_n = test_n;
  fs::create_directories(root);
  if (dataset == "mnist") {
    one::write_synth_mnist(root, spec);
  } else {
    one::write_synth_cifar10(root, spec);
  }
}

// Loads the configured dataset, generating it first if the files are absent.
// Normalisation statistics always come from the full train split; the train
// subset is carved out afterwards so eval-time preprocessing matches.
DataPair load_data(const TrainConfig& cfg) {
  const std::string& root = cfg.data_root;
  DataPair d;
  if (cfg.dataset == "mnist") {
    if (!one::mnist_files_present(root)) generate_dataset("mnist", root, 0, 0);
    d.train = one::load_idx(one::mnist_train_images(root), one::mnist_train_labels(root), 10,
                            "train");
    d.test = one::load_idx(one::mnist_test_images(root), one::mnist_test_labels(root), 10, "test");
  } else {
    if (!one::cifar10_files_present(root)) generate_dataset("cifar10", root, 0, 0);
    std::vector<std::string> files;
    for (int i = 1; i <= 5; ++i) files.push_back(one::cifar10_train_file(root, i));
    d.train = one::load_cifar10_bin(files, "train");
    d.test = one::load_cifar10_bin({one::cifar10_test_file(root)}, "test");
  }
  const auto stats = one::compute_norm_stats(d.train);
  one::apply_normalization(d.train, stats);
  one::apply_normalization(d.test, stats);
  if (cfg.subset > 0 && cfg.subset < d.train.n) {
    d.train = one::subset(d.train, cfg.subset, one::kSubsetSeed);
  }
  return d;
}

std::vector<std::string> run_artifacts(const TrainConfig& cfg, const std::string& prefix) {
  std::vector<std::string> a = {prefix + "metrics.csv", prefix + "metrics.ndjson"};
  if (cfg.checkpoint_every > 0) {
    for (int k = cfg.checkpoint_every; k < cfg.epochs; k += cfg.checkpoint_every) {
      a.push_back(prefix + "checkpoint_epoch_" + std::to_string(k) + ".ckpt");
    }
  }
  a.push_back(prefix + "checkpoint.ckpt");
  return a;
}

void append(std::vector<std::string>& into, std::vector<std::string> more) {
  for (auto& s : more) into.push_back(std::move(s));
}

void print_kv(const std::string& key, double value) {
  std::cout << key << "=" << one::format_double(value) << "\n";
}

const one::MetricsRecord& final_test_record(const std::vector<one::MetricsRecord>& metrics) {
  for (auto it = metrics.rbegin(); it != metrics.rend(); ++it) {
    if (it->phase == "test") return *it;
  }
  throw DataError("run produced no test-phase metrics");
}

int cmd_train(const ConfigCli& common, const std::string& method, const std::string& resume) {
  const TrainConfig cfg = common.resolve();
  if (method != "one" && method != "vanilla" && method != "kd" && method != "ensemble") {
    throw ConfigError("unknown --method '" + method + "' (expected one|vanilla|kd|ensemble)");
  }
  if (!resume.empty() && method != "one" && method != "vanilla") {
    throw ConfigError("--resume is only supported for --method one and vanilla");
  }

  const auto data = load_data(cfg);

  one::RunManifest manifest;
  manifest.command = "train --method " + method;
  manifest.config = cfg;
  manifest.build_rev = one::build_revision();
  manifest.created_utc = one::utc_timestamp();
  manifest.artifacts = {"manifest.json"};
  if (method == "one" || method == "vanilla") {
    append(manifest.artifacts, run_artifacts(cfg, ""));
  } else if (method == "kd") {
    append(manifest.artifacts, run_artifacts(cfg, "teacher/"));
    append(manifest.artifacts, run_artifacts(cfg, "student/"));
  } else {
    for (int k = 0; k < cfg.ensemble_n; ++k) {
      append(manifest.artifacts, run_artifacts(cfg, "member_" + std::to_string(k) + "/"));
    }
  }
  fs::create_directories(cfg.out_dir);
  one::write_manifest(cfg.out_dir + "/manifest.json", manifest);

  if (method == "one") {
    auto res = one::train_one(cfg, data.train, data.test, cfg.out_dir, resume);
    const auto& last = final_test_record(res.art.metrics);
    print_kv("branch0_test_error", last.branch_top1[0]);
    print_kv("teacher_test_error", last.teacher_top1);
    print_kv("train_flops", static_cast<double>(res.art.train_flops));
  } else if (method == "vanilla") {
    auto res = one::train_vanilla(cfg, data.train, data.test, cfg.out_dir, resume);
    const auto& last = final_test_record(res.art.metrics);
    print_kv("test_error", last.branch_top1[0]);
    print_kv("train_flops", static_cast<double>(res.art.train_flops));
  } else if (method == "kd") {
    auto res = one::train_kd_offline(cfg, data.train, data.test, cfg.out_dir);
    print_kv("teacher_test_error", final_test_record(res.teacher_art.metrics).branch_top1[0]);
    print_kv("student_test_error", final_test_record(res.student_art.metrics).branch_top1[0]);
    print_kv("train_flops", static_cast<double>(res.train_flops));
  } else {
    auto res = one::train_indep_ensemble(cfg, cfg.ensemble_n, data.train, data.test, cfg.out_dir);
    double mean_member = 0.0;
    for (const auto& art : res.member_art) {
      mean_member += final_test_record(art.metrics).branch_top1[0];
    }
    mean_member /= static_cast<double>(res.member_art.size());
    print_kv("ensemble_test_error", res.ensemble_top1);
    print_kv("mean_member_test_error", mean_member);
    print_kv("train_flops", static_cast<double>(res.train_flops));
  }
  std::cout << "out_dir=" << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const ConfigCli& common, const std::string& checkpoint, const std::string& mode) {
  const TrainConfig cfg = common.resolve();
  const auto data = load_data(cfg);
  const auto meta = one::peek_checkpoint(checkpoint);

  if (mode == "single") {
    one::SingleNet net = meta.kind == one::CheckpointKind::Multi
                             ? one::load_multi_checkpoint(checkpoint).strip()
                             : one::load_single_checkpoint(checkpoint);
    const auto rec = one::evaluate_net(net, data.test, cfg, "test");
    print_kv("test_error", rec.branch_top1[0]);
    print_kv("test_topn_error", rec.branch_topn[0]);
    print_kv("test_ce", rec.branch_ce[0]);
    return 0;
  }
  if (mode != "ensemble") throw ConfigError("unknown --mode '" + mode + "'");
  if (meta.kind != one::CheckpointKind::Multi) {
    throw ConfigError("ensemble evaluation needs a multi-branch checkpoint");
  }
  auto model = one::load_multi_checkpoint(checkpoint);
  const auto rec = one::evaluate_model(model, data.test, cfg, "test");
  print_kv("teacher_test_error", rec.teacher_top1);
  print_kv("teacher_test_topn_error", rec.teacher_topn);
  for (std::size_t b = 0; b < rec.branch_top1.size(); ++b) {
    print_kv("branch" + std::to_string(b) + "_test_error", rec.branch_top1[b]);
  }
  return 0;
}

int cmd_perturb(const ConfigCli& common, const std::string& checkpoint, const std::string& out,
                double dmax, int points, int dirs, std::uint64_t probe_seed) {
  const TrainConfig cfg = common.resolve();
  if (points < 1) throw ConfigError("--points must be at least 1");
  if (dmax < 0.0) throw ConfigError("--dmax must be >= 0");
  const auto data = load_data(cfg);

  one::PerturbationSpec spec;
  spec.directions = dirs;
  spec.seed = probe_seed;
  spec.magnitudes.clear();
  for (int i = 0; i < points; ++i) {
    spec.magnitudes.push_back(points == 1 ? 0.0 : dmax * i / (points - 1));
  }

  const auto report = one::perturb_checkpoint(checkpoint, spec, data.train, data.test,
                                              cfg.batch_size);
  one::write_robustness_csv(out, report);
  std::cout << "rows=" << report.rows.size() << "\n";
  std::cout << "report=" << out << "\n";
  return 0;
}

int cmd_variance(const ConfigCli& common, const std::vector<std::string>& checkpoints) {
  const TrainConfig cfg = common.resolve();
  const auto data = load_data(cfg);

  double value = 0.0;
  if (checkpoints.size() == 1) {
    const auto meta = one::peek_checkpoint(checkpoints[0]);
    if (meta.kind != one::CheckpointKind::Multi) {
      throw ConfigError("inter-branch variance needs a multi-branch checkpoint; "
                        "pass several single-net checkpoints for inter-model variance");
    }
    auto model = one::load_multi_checkpoint(checkpoints[0]);
    value = one::branch_variance(model, data.train, cfg.batch_size);
  } else {
    std::vector<one::SingleNet> nets;
    nets.reserve(checkpoints.size());
    for (const auto& path : checkpoints) {
      const auto meta = one::peek_checkpoint(path);
      nets.push_back(meta.kind == one::CheckpointKind::Multi
                         ? one::load_multi_checkpoint(path).strip()
                         : one::load_single_checkpoint(path));
    }
    value = one::ensemble_variance(nets, data.train, cfg.batch_size);
  }
  print_kv("variance", value);
  return 0;
}

int cmd_export(const std::vector<std::string>& metrics, const std::string& format,
               const std::string& out) {
  const auto rows = one::aggregate_metrics(metrics);
  if (format == "csv") {
    one::write_summary_csv(out, rows);
  } else if (format == "json") {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
      j.push_back({{"key", row.key},
                   {"mean", row.stat.mean},
                   {"stddev", row.stat.stddev},
                   {"n", row.stat.n}});
    }
    std::ofstream file(out, std::ios::trunc);
    if (!file) throw DataError("cannot write summary: " + out);
    file << j.dump(2) << '\n';
    if (!file.good()) throw DataError("failed writing summary: " + out);
  } else {
    throw ConfigError("unknown --format '" + format + "' (expected csv|json)");
  }
  std::cout << "summary=" << out << "\n";
  return 0;
}

int cmd_synth(const std::string& dataset, const std::string& root, int train_n, int test_n) {
  if (dataset != "mnist" && dataset != "cifar10") {
    throw ConfigError("unknown --dataset '" + dataset + "'");
  }
  generate_dataset(dataset, root, train_n, test_n);
  std::cout << "root=" << root << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training toolkit for gated multi-branch online distillation"};
  app.set_version_flag("--version", std::string(one::build_revision()));
  app.require_subcommand(1);
  int rc = 0;

  auto* train = app.add_subcommand("train", "train a model and write run artifacts");
  ConfigCli train_cfg;
  train_cfg.attach(*train);
  std::string method = "one";
  std::string resume;
  train->add_option("--method", method, "one|vanilla|kd|ensemble");
  train->add_option("--resume", resume, "continue from a cadence checkpoint");
  train->callback([&] { rc = cmd_train(train_cfg, method, resume); });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ConfigCli eval_cfg;
  eval_cfg.attach(*eval);
  std::string eval_ckpt, eval_mode = "single";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--mode", eval_mode, "single (stripped target branch) | ensemble (gated)");
  eval->callback([&] { rc = cmd_eval(eval_cfg, eval_ckpt, eval_mode); });

  auto* perturb = app.add_subcommand("perturb", "parameter-space robustness probe");
  ConfigCli perturb_cfg;
  perturb_cfg.attach(*perturb);
  std::string perturb_ckpt, perturb_out = "robustness.csv";
  double dmax = 5.0;
  int points = 11, dirs = 5;
  std::uint64_t probe_seed = 77;
  perturb->add_option("--checkpoint", perturb_ckpt, "checkpoint to probe")->required();
  perturb->add_option("--report", perturb_out, "output CSV path");
  perturb->add_option("--dmax", dmax, "largest perturbation magnitude");
  perturb->add_option("--points", points, "number of magnitudes between 0 and dmax");
  perturb->add_option("--dirs", dirs, "random directions per magnitude");
  perturb->add_option("--probe-seed", probe_seed, "seed for direction sampling");
  perturb->callback([&] {
    rc = cmd_perturb(perturb_cfg, perturb_ckpt, perturb_out, dmax, points, dirs, probe_seed);
  });

  auto* variance = app.add_subcommand("variance", "prediction variance across heads");
  ConfigCli variance_cfg;
  variance_cfg.attach(*variance);
  std::vector<std::string> variance_ckpts;
  variance->add_option("--checkpoint", variance_ckpts,
                       "one multi-branch checkpoint, or several single-net ones")
      ->required();
  variance->callback([&] { rc = cmd_variance(variance_cfg, variance_ckpts); });

  auto* exp = app.add_subcommand("export", "aggregate final test metrics across runs");
  std::vector<std::string> export_metrics;
  std::string export_format = "csv", export_out = "summary.csv";
  exp->add_option("--metrics", export_metrics, "metrics CSV files to aggregate")->required();
  exp->add_option("--format", export_format, "csv|json");
  exp->add_option("--out", export_out, "output path");
  exp->callback([&] { rc = cmd_export(export_metrics, export_format, export_out); });

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset files");
  std::string synth_dataset, synth_root;
  int synth_train_n = 0, synth_test_n = 0;
  synth->add_option("--dataset", synth_dataset, "mnist|cifar10")->required();
  synth->add_option("--root", synth_root, "directory to write into")->required();
  synth->add_option("--train-n", synth_train_n, "train sample count (0 = default)");
  synth->add_option("--test-n", synth_test_n, "test sample count (0 = default)");
  synth->callback([&] { rc = cmd_synth(synth_dataset, synth_root, synth_train_n, synth_test_n); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const one::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const one::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const one::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const one::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
