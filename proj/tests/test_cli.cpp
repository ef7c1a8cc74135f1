#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "one/config.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(ONE_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (true) {
    const std::size_t n = ::fread(buf, 1, sizeof(buf), pipe);
    if (n == 0) break;
    out.append(buf, n);
  }
  const int status = ::pclose(pipe);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, out};
}

// Value of the first "key=value" line in the command output.
std::string output_value(const std::string& output, const std::string& key) {
  const std::string needle = key + "=";
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(needle, 0) == 0) return line.substr(needle.size());
  }
  FAIL("output has no line starting with ", needle, ":\n", output);
  return "";
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// One scratch tree for the whole file: a generated tiny dataset plus one
// finished training run most cases poke at.
struct World {
  fs::path dir;
  std::string root;
  std::string run;
  std::string train_output;

  World() {
    dir = fs::temp_directory_path() / ("one_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    root = (dir / "data").string();
    run = (dir / "run").string();
    auto synth = run_cli("synth --dataset mnist --root " + root + " --train-n 300 --test-n 80");
    REQUIRE(synth.exit_code == 0);
    auto train = run_cli("train --method one " + tiny_args() + " --out " + run);
    REQUIRE(train.exit_code == 0);
    train_output = train.output;
  }
  ~World() { fs::remove_all(dir); }

  std::string tiny_args() const {
    return "--data-root " + root +
           " --set epochs=2 --set batch_size=32 --set seed=5"
           " --set 'trunk=conv:4x3s1p1,bn,relu,maxpool:2s2'"
           " --set 'branch=conv:4x3s1p1,bn,relu,gap,linear:auto'"
           " --set 'kd_teacher_trunk=conv:8x3s1p1,bn,relu,maxpool:2s2'"
           " --set 'kd_teacher_branch=conv:8x3s1p1,bn,relu,gap,linear:auto'";
  }
  std::string sub(const char* name) const { return (dir / name).string(); }
};

World& world() {
  static World w;
  return w;
}

}  // namespace

TEST_CASE("training writes every artifact the manifest promises") {
  auto& w = world();
  const auto manifest = nlohmann::json::parse(read_bytes(w.run + "/manifest.json"));
  CHECK(manifest.at("command") == "train --method one");
  CHECK(manifest.at("seed") == 5);
  CHECK(manifest.at("config").at("epochs") == "2");
  CHECK(!manifest.at("build_revision").get<std::string>().empty());

  const auto artifacts = manifest.at("artifacts").get<std::vector<std::string>>();
  CHECK(artifacts.size() == 4);  // manifest, csv, ndjson, checkpoint
  for (const auto& rel : artifacts) {
    CAPTURE(rel);
    CHECK(fs::exists(fs::path(w.run) / rel));
  }
  // and nothing else appeared
  std::size_t found = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(w.run)) ++found;
  CHECK(found == artifacts.size());
}

TEST_CASE("identical args reproduce artifacts byte for byte") {
  auto& w = world();
  const auto again = run_cli("train --method one " + w.tiny_args() + " --out " + w.sub("again"));
  REQUIRE(again.exit_code == 0);
  CHECK(read_bytes(w.sub("again") + "/checkpoint.ckpt") == read_bytes(w.run + "/checkpoint.ckpt"));
  CHECK(read_bytes(w.sub("again") + "/metrics.csv") == read_bytes(w.run + "/metrics.csv"));
  CHECK(read_bytes(w.sub("again") + "/metrics.ndjson") == read_bytes(w.run + "/metrics.ndjson"));

  // manifests may differ only in their timestamp and the varied --out
  auto a = nlohmann::json::parse(read_bytes(w.run + "/manifest.json"));
  auto b = nlohmann::json::parse(read_bytes(w.sub("again") + "/manifest.json"));
  for (auto* j : {&a, &b}) {
    j->erase("created_utc");
    j->at("config").erase("out_dir");
  }
  CHECK(a == b);
}

TEST_CASE("single-mode eval reports the branch-0 error logged at the final epoch") {
  auto& w = world();
  const auto eval = run_cli("eval --checkpoint " + w.run + "/checkpoint.ckpt --mode single " +
                            w.tiny_args());
  REQUIRE(eval.exit_code == 0);
  CHECK(output_value(eval.output, "test_error") ==
        output_value(w.train_output, "branch0_test_error"));

  const auto gated = run_cli("eval --checkpoint " + w.run + "/checkpoint.ckpt --mode ensemble " +
                             w.tiny_args());
  REQUIRE(gated.exit_code == 0);
  CHECK(output_value(gated.output, "teacher_test_error") ==
        output_value(w.train_output, "teacher_test_error"));
}

TEST_CASE("usage and IO failures map onto the documented exit codes") {
  auto& w = world();
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("train --method nope " + w.tiny_args()).exit_code == 2);
  CHECK(run_cli("train --method one " + w.tiny_args() + " --set momentum=2").exit_code == 2);
  CHECK(run_cli("eval --checkpoint " + w.sub("absent.ckpt") + " " + w.tiny_args()).exit_code == 3);
  CHECK(run_cli("train --no-such-flag").exit_code != 0);
  CHECK(run_cli("synth --dataset what --root " + w.sub("x")).exit_code == 2);
}

TEST_CASE("perturb emits the requested probe grid") {
  auto& w = world();
  const auto report = w.sub("rob.csv");
  const auto res = run_cli("perturb --checkpoint " + w.run + "/checkpoint.ckpt --report " +
                           report + " --points 3 --dirs 2 " + w.tiny_args());
  REQUIRE(res.exit_code == 0);
  CHECK(output_value(res.output, "rows") == "6");

  std::ifstream in(report);
  std::string line;
  std::getline(in, line);
  CHECK(line == "d,direction,train_ce,train_error,test_error");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 6);
  // both d=0 rows carry identical unperturbed metrics
  CHECK(rows[0].substr(0, 2) == "0,");
  CHECK(rows[0].substr(4) == rows[1].substr(4));
}

TEST_CASE("variance needs several heads and says so for a single net") {
  auto& w = world();
  const auto multi = run_cli("variance --checkpoint " + w.run + "/checkpoint.ckpt " +
                             w.tiny_args());
  REQUIRE(multi.exit_code == 0);
  CHECK(std::stod(output_value(multi.output, "variance")) > 0.0);

  const auto vrun = run_cli("train --method vanilla " + w.tiny_args() + " --out " +
                            w.sub("vanilla"));
  REQUIRE(vrun.exit_code == 0);
  const auto single = run_cli("variance --checkpoint " + w.sub("vanilla") + "/checkpoint.ckpt " +
                              w.tiny_args());
  CHECK(single.exit_code == 2);

  // two single-net checkpoints work as an inter-model measure
  const auto pair = run_cli("variance --checkpoint " + w.sub("vanilla") + "/checkpoint.ckpt" +
                            " --checkpoint " + w.run + "/checkpoint.ckpt " + w.tiny_args());
  REQUIRE(pair.exit_code == 0);
  CHECK(std::stod(output_value(pair.output, "variance")) > 0.0);
}

TEST_CASE("export mirrors the summary between csv and json") {
  auto& w = world();
  const auto csv_path = w.sub("summary.csv");
  const auto json_path = w.sub("summary.json");
  const auto metrics = w.run + "/metrics.csv";

  REQUIRE(run_cli("export --metrics " + metrics + " --metrics " + metrics +
                  " --format csv --out " + csv_path)
              .exit_code == 0);
  REQUIRE(run_cli("export --metrics " + metrics + " --metrics " + metrics +
                  " --format json --out " + json_path)
              .exit_code == 0);

  const auto j = nlohmann::json::parse(read_bytes(json_path));
  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "key,mean,stddev,n");
  std::size_t row = 0;
  while (std::getline(in, line)) {
    REQUIRE(row < j.size());
    const auto comma = line.find(',');
    const auto key = line.substr(0, comma);
    CHECK(key == j[row].at("key"));
    // identical runs aggregated: zero spread everywhere
    CHECK(j[row].at("stddev") == 0.0);
    CHECK(j[row].at("n") == 2);
    ++row;
  }
  CHECK(row == j.size());
}
