#include "one/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace one {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: " + key + " wants a boolean, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " wants an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " wants an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " wants a number, got '" + v + "'");
  }
}

// Key table shared by the parser and the canonical dump; dump order is the
// declaration order here.
struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = parse_int("epochs", v); },
       [](const TrainConfig& c) { return std::to_string(c.epochs); }},
      {"branches",
       [](TrainConfig& c, const std::string& v) { c.branches = parse_int("branches", v); },
       [](const TrainConfig& c) { return std::to_string(c.branches); }},
      {"temperature",
       [](TrainConfig& c, const std::string& v) { c.temperature = parse_double("temperature", v); },
       [](const TrainConfig& c) { return format_double(c.temperature); }},
      {"base_lr",
       [](TrainConfig& c, const std::string& v) { c.base_lr = parse_double("base_lr", v); },
       [](const TrainConfig& c) { return format_double(c.base_lr); }},
      {"momentum",
       [](TrainConfig& c, const std::string& v) { c.momentum = parse_double("momentum", v); },
       [](const TrainConfig& c) { return format_double(c.momentum); }},
      {"weight_decay",
       [](TrainConfig& c, const std::string& v) {
         c.weight_decay = parse_double("weight_decay", v);
       },
       [](const TrainConfig& c) { return format_double(c.weight_decay); }},
      {"batch_size",
       [](TrainConfig& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); },
       [](const TrainConfig& c) { return std::to_string(c.batch_size); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      {"no_distill",
       [](TrainConfig& c, const std::string& v) { c.no_distill = parse_bool("no_distill", v); },
       [](const TrainConfig& c) { return c.no_distill ? "true" : "false"; }},
      {"no_sharing",
       [](TrainConfig& c, const std::string& v) { c.no_sharing = parse_bool("no_sharing", v); },
       [](const TrainConfig& c) { return c.no_sharing ? "true" : "false"; }},
      {"no_gating",
       [](TrainConfig& c, const std::string& v) { c.no_gating = parse_bool("no_gating", v); },
       [](const TrainConfig& c) { return c.no_gating ? "true" : "false"; }},
      {"kl_backprop_teacher",
       [](TrainConfig& c, const std::string& v) {
         c.kl_backprop_teacher = parse_bool("kl_backprop_teacher", v);
       },
       [](const TrainConfig& c) { return c.kl_backprop_teacher ? "true" : "false"; }},
      {"dataset", [](TrainConfig& c, const std::string& v) { c.dataset = v; },
       [](const TrainConfig& c) { return c.dataset; }},
      {"data_root", [](TrainConfig& c, const std::string& v) { c.data_root = v; },
       [](const TrainConfig& c) { return c.data_root; }},
      {"subset", [](TrainConfig& c, const std::string& v) { c.subset = parse_int("subset", v); },
       [](const TrainConfig& c) { return std::to_string(c.subset); }},
      {"augment",
       [](TrainConfig& c, const std::string& v) { c.augment = parse_bool("augment", v); },
       [](const TrainConfig& c) { return c.augment ? "true" : "false"; }},
      {"top_n", [](TrainConfig& c, const std::string& v) { c.top_n = parse_int("top_n", v); },
       [](const TrainConfig& c) { return std::to_string(c.top_n); }},
      {"trunk", [](TrainConfig& c, const std::string& v) { c.trunk = v; },
       [](const TrainConfig& c) { return c.trunk; }},
      {"branch", [](TrainConfig& c, const std::string& v) { c.branch = v; },
       [](const TrainConfig& c) { return c.branch; }},
      {"kd_teacher_trunk", [](TrainConfig& c, const std::string& v) { c.kd_teacher_trunk = v; },
       [](const TrainConfig& c) { return c.kd_teacher_trunk; }},
      {"kd_teacher_branch", [](TrainConfig& c, const std::string& v) { c.kd_teacher_branch = v; },
       [](const TrainConfig& c) { return c.kd_teacher_branch; }},
      {"ensemble_n",
       [](TrainConfig& c, const std::string& v) { c.ensemble_n = parse_int("ensemble_n", v); },
       [](const TrainConfig& c) { return std::to_string(c.ensemble_n); }},
      {"checkpoint_every",
       [](TrainConfig& c, const std::string& v) {
         c.checkpoint_every = parse_int("checkpoint_every", v);
       },
       [](const TrainConfig& c) { return std::to_string(c.checkpoint_every); }},
      {"out_dir", [](TrainConfig& c, const std::string& v) { c.out_dir = v; },
       [](const TrainConfig& c) { return c.out_dir; }},
  };
  return table;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  // integral values stay in plain notation ("%.1g" would turn 90 into 9e+01)
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
  }
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void apply_setting(TrainConfig& cfg, const std::string& pair) {
  const auto eq = pair.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: expected key=value, got '" + pair + "'");
  }
  const std::string key = trim(pair.substr(0, eq));
  const std::string value = trim(pair.substr(eq + 1));
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(base, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return base;
}

TrainConfig load_config_file(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, std::move(base));
}

TrainConfig preset(const std::string& name) {
  TrainConfig cfg;
  if (name == "desk-mnist") {
    cfg.dataset = "mnist";
    cfg.subset = 10000;
    cfg.epochs = 30;
    cfg.augment = true;
    return cfg;
  }
  if (name == "desk-cifar10") {
    cfg.dataset = "cifar10";
    cfg.subset = 5000;
    cfg.epochs = 30;
    cfg.augment = true;
    cfg.trunk = "conv:16x3s1p1,bn,relu,maxpool:2s2,conv:32x3s1p1,bn,relu,maxpool:2s2";
    cfg.branch = "conv:32x3s1p1,bn,relu,gap,linear:auto";
    cfg.kd_teacher_trunk = "conv:32x3s1p1,bn,relu,maxpool:2s2,conv:64x3s1p1,bn,relu,maxpool:2s2";
    cfg.kd_teacher_branch = "conv:64x3s1p1,bn,relu,gap,linear:auto";
    return cfg;
  }
  throw ConfigError("config: unknown preset '" + name + "' (have desk-mnist, desk-cifar10)");
}

std::vector<std::string> preset_names() { return {"desk-mnist", "desk-cifar10"}; }

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (cfg.branches < 1) throw ConfigError("config: branches must be >= 1");
  if (cfg.temperature <= 0) throw ConfigError("config: temperature must be positive");
  if (cfg.base_lr < 0) throw ConfigError("config: base_lr must be non-negative");
  if (cfg.momentum < 0 || cfg.momentum >= 1)
    throw ConfigError("config: momentum must be in [0, 1)");
  if (cfg.weight_decay < 0) throw ConfigError("config: weight_decay must be non-negative");
  if (cfg.batch_size < 2)
    throw ConfigError("config: batch_size must be >= 2 (batch statistics need it)");
  if (cfg.dataset != "mnist" && cfg.dataset != "cifar10")
    throw ConfigError("config: dataset must be mnist or cifar10, got '" + cfg.dataset + "'");
  if (cfg.subset < 0) throw ConfigError("config: subset must be >= 0");
  if (cfg.top_n < 1) throw ConfigError("config: top_n must be >= 1");
  if (cfg.ensemble_n < 1) throw ConfigError("config: ensemble_n must be >= 1");
  if (cfg.checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be >= 0");
  if (cfg.trunk.empty()) throw ConfigError("config: trunk spec is empty");
  if (cfg.branch.empty()) throw ConfigError("config: branch spec is empty");
}

std::string resolved_dump(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += '=';
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace one
