#pragma once

// Run manifests pin down what a command actually did: the fully resolved
// config, the artifact files the run will produce, and the code revision.
// One manifest per run directory, written before training begins so even an
// interrupted run records its intent. Timestamps live here and nowhere else;
// every other artifact is byte-reproducible.

#include <string>
#include <vector>

#include "one/config.hpp"

namespace one {

struct RunManifest {
  std::string command;                 // e.g. "train --method one"
  TrainConfig config;                  // resolved snapshot
  std::vector<std::string> artifacts;  // paths relative to the run directory
  std::string build_rev;
  std::string created_utc;
};

// ISO 8601 UTC, second resolution.
std::string utc_timestamp();

void write_manifest(const std::string& path, const RunManifest& m);

}  // namespace one
