#pragma once

// Flat key=value run configuration. Files hold one pair per line, '#' starts
// a comment, unknown keys are rejected. Named presets are compiled in;
// command-line overrides apply on top in order. resolved_dump() emits the
// full configuration in a fixed key order so two equal configs always
// serialise to identical text.

#include <cstdint>
#include <string>
#include <vector>

#include "one/error.hpp"

namespace one {

struct TrainConfig {
  // schedule and optimiser
  int epochs = 20;
  int branches = 2;  // auxiliary branch count m; the model trains m+1 heads
  double temperature = 3.0;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 128;
  std::uint64_t seed = 1;

  // ablation flags
  bool no_distill = false;
  bool no_sharing = false;
  bool no_gating = false;
  bool kl_backprop_teacher = false;

  // dataset
  std::string dataset = "mnist";  // mnist | cifar10
  std::string data_root = "data";
  int subset = 0;  // stratified train subset size, 0 = full split
  bool augment = false;
  int top_n = 5;

  // architecture
  std::string trunk = "conv:8x3s1p1,bn,relu,maxpool:2s2,conv:16x3s1p1,bn,relu,maxpool:2s2";
  std::string branch = "conv:16x3s1p1,bn,relu,gap,linear:auto";

  // two-phase offline distillation teacher (used by the kd method only)
  std::string kd_teacher_trunk =
      "conv:16x3s1p1,bn,relu,maxpool:2s2,conv:32x3s1p1,bn,relu,maxpool:2s2";
  std::string kd_teacher_branch = "conv:32x3s1p1,bn,relu,gap,linear:auto";

  // independent-ensemble method
  int ensemble_n = 3;

  // artifacts
  int checkpoint_every = 0;  // epochs between mid-run checkpoints, 0 = final only
  std::string out_dir = "runs/out";

  bool operator==(const TrainConfig&) const = default;
};

// Set one "key=value" pair; unknown key or unparsable value throws ConfigError.
void apply_setting(TrainConfig& cfg, const std::string& pair);

// Parse a whole config file body (line-oriented key=value).
TrainConfig parse_config_text(const std::string& text, TrainConfig base = {});
TrainConfig load_config_file(const std::string& path, TrainConfig base = {});

// Compiled-in presets: "desk-mnist", "desk-cifar10".
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Range and consistency checks; throws ConfigError with the offending key.
void validate(const TrainConfig& cfg);

// Canonical serialisation, parse(resolved_dump(c)) == c.
std::string resolved_dump(const TrainConfig& cfg);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace one
