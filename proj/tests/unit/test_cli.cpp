#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cl2dc/cli.hpp"
#include "cl2dc/config.hpp"
#include "cl2dc/error.hpp"

using namespace cl2dc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cl2dc_unit_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the driver with stderr captured.
struct Invocation {
  int code;
  std::string err;
};

Invocation cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cl2dc");
  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const int code = run_cli(args);
  std::cerr.rdbuf(old);
  return {code, captured.str()};
}

// A run small enough for a unit test.
std::vector<std::string> tiny(const TempDir& dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> a = {"-o", dir.path.string(), "-s", "dataset.samples=200", "-s", "consensus.epochs=3",
                                "-s", "consensus.hidden=4", "-s", "train.epochs=3", "-s", "model.gating_hidden=4",
                                "-s", "model.complement_hidden=4,4"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("exit codes by error type") {
  CHECK(exit_code_for(ConfigError("x")) == kExitUsage);
  CHECK(exit_code_for(DomainError("x")) == kExitUsage);
  CHECK(exit_code_for(ParseError("x")) == kExitData);
  CHECK(exit_code_for(SchemaError("x")) == kExitData);
  CHECK(exit_code_for(EvaluationError("x")) == kExitData);
  CHECK(exit_code_for(TrainingError("x")) == kExitTraining);
}

TEST_CASE("usage errors") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"eval"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("simulate, consensus, train, eval and posthoc end to end") {
  TempDir dir("pipeline");
  REQUIRE(cli(cat({"simulate"}, tiny(dir))).code == kExitOk);
  for (const char* f : {"dataset.jsonl", "train.jsonl", "test.jsonl", "simulate.manifest.json"})
    CHECK(fs::exists(dir.path / f));

  const auto train_before = slurp(dir.path / "train.jsonl");
  REQUIRE(cli(cat({"consensus", "--train", dir / "train.jsonl"}, tiny(dir))).code == kExitOk);
  REQUIRE(cli(cat({"train", "--train", dir / "train.jsonl", "--consensus", dir / "consensus.jsonl", "--classifier",
                   dir / "classifier.json"},
                  tiny(dir, {"-s", "train.epsilon=0.4"})))
              .code == kExitOk);
  CHECK(slurp(dir.path / "train.jsonl") == train_before);

  const auto first = slurp(dir.path / "checkpoint.json");
  REQUIRE(cli(cat({"train", "--train", dir / "train.jsonl", "--consensus", dir / "consensus.jsonl", "--classifier",
                   dir / "classifier.json"},
                  tiny(dir, {"-s", "train.epsilon=0.4"})))
              .code == kExitOk);
  CHECK(slurp(dir.path / "checkpoint.json") == first);

  const auto log = slurp(dir.path / "train_log.csv");
  CHECK(log.rfind("epoch,loss,mean_g_ai,beta", 0) == 0);

  REQUIRE(cli(cat({"eval", "--checkpoint", dir / "checkpoint.json", "--test", dir / "test.jsonl"}, tiny(dir))).code ==
          kExitOk);
  const auto ev = nlohmann::json::parse(slurp(dir.path / "eval.json"));
  CHECK(ev.at("epsilon").get<double>() == 0.4);
  CHECK(ev.at("samples").get<int>() == 40);
  int routed = 0;
  for (const auto& [name, count] : ev.at("option_counts").items()) routed += count.get<int>();
  CHECK(routed == 40);

  REQUIRE(cli(cat({"posthoc", "--checkpoint", dir / "checkpoint.json", "--test", dir / "test.jsonl"}, tiny(dir)))
              .code == kExitOk);
  CHECK(slurp(dir.path / "posthoc.csv").rfind("coverage,accuracy\n", 0) == 0);

  const auto manifest = nlohmann::json::parse(slurp(dir.path / "eval.manifest.json"));
  CHECK(manifest.at("subcommand") == "eval");
  CHECK(manifest.at("config_hash").get<std::string>().size() == 64);
  CHECK(manifest.at("inputs").at("test").at("sha256") == sha256_hex(slurp(dir.path / "test.jsonl")));
  // The stored config reproduces the hash.
  auto config = Config::defaults();
  for (const auto& [k, v] : manifest.at("config").items()) config.set(k, v.get<std::string>());
  CHECK(config.hash() == manifest.at("config_hash").get<std::string>());
}

TEST_CASE("train without consensus files computes them itself") {
  TempDir dir("selfcons");
  REQUIRE(cli(cat({"simulate"}, tiny(dir))).code == kExitOk);
  CHECK(cli(cat({"train", "--train", dir / "train.jsonl"}, tiny(dir))).code == kExitOk);
  CHECK(cli(cat({"train", "--train", dir / "train.jsonl", "--consensus", dir / "train.jsonl"}, tiny(dir))).code ==
        kExitUsage);
}

TEST_CASE("failures leave no partial outputs") {
  TempDir dir("failure");
  REQUIRE(cli(cat({"simulate"}, tiny(dir))).code == kExitOk);
  const auto r = cli(cat({"train", "--train", dir / "train.jsonl"}, tiny(dir, {"-s", "train.bogus=1"})));
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("train.bogus") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path / "checkpoint.json"));
  CHECK_FALSE(fs::exists(dir.path / "train.manifest.json"));

  // Divergent training fails after the consensus step.
  const auto d = cli(cat({"train", "--train", dir / "train.jsonl"}, tiny(dir, {"-s", "train.lr0=1e300"})));
  CHECK(d.code == kExitTraining);
  CHECK_FALSE(fs::exists(dir.path / "checkpoint.json"));
}

TEST_CASE("inputs are never overwritten") {
  TempDir dir("inputs");
  REQUIRE(cli(cat({"simulate"}, tiny(dir))).code == kExitOk);
  fs::copy_file(dir.path / "train.jsonl", dir.path / "consensus.jsonl");
  const auto before = slurp(dir.path / "consensus.jsonl");
  const auto r = cli(cat({"consensus", "--train", dir / "consensus.jsonl"}, tiny(dir)));
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("overwrite") != std::string::npos);
  CHECK(slurp(dir.path / "consensus.jsonl") == before);
}

TEST_CASE("eval without any reference label fails") {
  TempDir dir("noref");
  REQUIRE(cli(cat({"simulate"}, tiny(dir))).code == kExitOk);
  REQUIRE(cli(cat({"train", "--train", dir / "train.jsonl"}, tiny(dir))).code == kExitOk);
  const auto ckpt = dir / "checkpoint.json";

  // No ground truth, and the only sample lacks an annotation.
  std::ofstream(dir.path / "bare.jsonl") << R"({"C":2,"M":2,"F":2})" "\n"
                                         << R"({"id":"x","features":[0.1,0.2],"annotations":[1,-1]})" "\n";
  CHECK(cli(cat({"eval", "--checkpoint", ckpt, "--test", dir / "bare.jsonl"}, tiny(dir))).code == kExitData);

  // Ground truth demanded but absent.
  std::ofstream(dir.path / "nogt.jsonl") << R"({"C":2,"M":2,"F":2})" "\n"
                                         << R"({"id":"y","features":[0.3,0.2],"annotations":[1,0]})" "\n";
  CHECK(cli(cat({"eval", "--checkpoint", ckpt, "--test", dir / "nogt.jsonl"}, tiny(dir, {"-s", "eval.policy=gt"})))
            .code == kExitData);
  CHECK(cli(cat({"eval", "--checkpoint", ckpt, "--test", dir / "nogt.jsonl"}, tiny(dir))).code == kExitOk);

  std::ofstream(dir.path / "wide.jsonl") << R"({"C":2,"M":2,"F":3})" "\n"
                                         << R"({"id":"y","features":[0.3,0.2,1],"annotations":[1,0],"gt":1})" "\n";
  CHECK(cli(cat({"eval", "--checkpoint", ckpt, "--test", dir / "wide.jsonl"}, tiny(dir))).code == kExitData);
}

TEST_CASE("sweep writes one curve row per epsilon and seed") {
  TempDir dir("sweep");
  REQUIRE(cli(cat({"sweep"}, tiny(dir, {"-s", "train.epochs=1", "-s", "consensus.epochs=1"}))).code == kExitOk);
  std::istringstream curve(slurp(dir.path / "cl2dc_curve.csv"));
  std::string line;
  std::getline(curve, line);
  CHECK(line == "epsilon,achieved_coverage,accuracy,seed");
  int rows = 0;
  while (std::getline(curve, line)) ++rows;
  CHECK(rows == 15);
  const auto summary = slurp(dir.path / "summary.csv");
  CHECK(summary.rfind("method,auacc\ncl2dc,", 0) == 0);
  CHECK(summary.find("ai-only,") != std::string::npos);
  CHECK(fs::exists(dir.path / "baselines.csv"));
}

TEST_CASE("plot data merges curves by method") {
  TempDir dir("plot");
  std::ofstream(dir.path / "cl2dc_curve.csv") << "epsilon,achieved_coverage,accuracy,seed\n0.2,0.19,0.9,0\n0.4,0.41,0.88,0\n";
  std::ofstream(dir.path / "lambda-0.1_curve.csv") << "epsilon,achieved_coverage,accuracy,seed\n0.2,0.25,0.85,1\n";
  std::ofstream(dir.path / "notes.txt") << "ignored\n";
  REQUIRE(cli({"plot-data", "-o", dir.path.string()}).code == kExitOk);
  CHECK(slurp(dir.path / "plot_data.csv") ==
        "method,epsilon,achieved_coverage,accuracy,seed\n"
        "cl2dc,0.2,0.19,0.9,0\n"
        "cl2dc,0.4,0.41,0.88,0\n"
        "lambda-0.1,0.2,0.25,0.85,1\n");

  std::ofstream(dir.path / "broken_curve.csv") << "epsilon,achieved_coverage,accuracy,seed\n0.2,0.2,0.9,0\n0.4,x,0.8,0\n";
  const auto r = cli({"plot-data", "--run-dir", dir.path.string(), "-o", dir.path.string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("broken_curve.csv") != std::string::npos);
  CHECK(r.err.find("line 3") != std::string::npos);

  TempDir empty("plot_empty");
  CHECK(cli({"plot-data", "-o", empty.path.string()}).code != kExitOk);
}
