#include "one/manifest.hpp"

#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "one/error.hpp"
#include "one/version.hpp"

namespace one {

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["created_utc"] = m.created_utc;
  j["build_revision"] = m.build_rev.empty() ? build_revision() : m.build_rev.c_str();
  j["seed"] = m.config.seed;

  auto cfg = nlohmann::ordered_json::object();
  std::istringstream dump(resolved_dump(m.config));
  std::string line;
  while (std::getline(dump, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    cfg[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = std::move(cfg);
  j["artifacts"] = m.artifacts;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
  if (!out.good()) throw DataError("failed writing manifest: " + path);
}

}  // namespace one
