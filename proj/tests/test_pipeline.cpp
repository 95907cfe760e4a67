#include "doctest.h"
#include "fixtures.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "planperf/hashing.hpp"
#include "planperf/pipeline.hpp"

using namespace planperf;
using namespace planperf::pipeline;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = 0;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("planperf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CliResult cli(const std::string& args, const fs::path& dir) {
  const char* exe = std::getenv("PLANPERF_CLI");
  REQUIRE_MESSAGE(exe != nullptr, "PLANPERF_CLI is not set");
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(exe) + " " + args + " 2>" + err.string();
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.out += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.err = slurp(err);
  return r;
}

const std::string kSmall = " --set synth.n_queries=400 --set gbt.rounds=20";

}  // namespace

TEST_CASE("config defaults, overrides and hash") {
  const auto base = load_config(std::nullopt, {});
  CHECK(base.seed == 42);
  CHECK(base.model == "gbt");
  const auto c = load_config(std::nullopt, {"gbt.rounds=50", "model=tree-attention", "target=cpu", "nn.train.lambda=0"});
  CHECK(c.gbt.rounds == 50);
  CHECK(c.model == "tree-attention");
  CHECK(c.target == Target::Cpu);
  CHECK(c.nn_train.lambda == 0);
  CHECK(c.hash() != base.hash());

  auto moved = base;
  moved.workdir = "/somewhere/else";
  CHECK(moved.hash() == base.hash());
  CHECK(ExperimentConfig::from_json(base.to_json()).hash() == base.hash());
  CHECK(base.stream_seed("a") != base.stream_seed("b"));

  CHECK_THROWS(load_config(std::nullopt, {"no_such_key=1"}));
  CHECK_THROWS(load_config(std::nullopt, {"classes=1"}));
  CHECK_THROWS(load_config(std::nullopt, {"model=forest"}));
  CHECK_THROWS(load_config(std::nullopt, {"=3"}));

  const fs::path dir = scratch("config");
  std::ofstream(dir / "c.json") << R"({"seed": 7, "gbt": {"rounds": 11}})";
  const auto f = load_config(dir / "c.json", {"gbt.rounds=12"});
  CHECK(f.seed == 7);
  CHECK(f.gbt.rounds == 12);
  fs::remove_all(dir);
}

TEST_CASE("override parsing") {
  Json j = Json::object();
  apply_override(j, "a.b=3");
  apply_override(j, "a.c=hello");
  apply_override(j, "d=[1,2]");
  CHECK(j.at("a").at("b") == 3);
  CHECK(j.at("a").at("c") == "hello");
  CHECK(j.at("d").size() == 2);
  CHECK_THROWS(apply_override(j, "a.b.c=1"));
}

TEST_CASE("report merges eval and bound artifacts") {
  Json eval{{"config_hash", "h"},
            {"space_version", "v1"},
            {"target", "latency"},
            {"model", "gbt"},
            {"task", "regression"},
            {"report", eval::regression_report(std::vector<eval::PredictionPair>{{3, 2}, {20, 20}}, {{10}}).to_json()}};
  std::vector<bound::Group> groups(1);
  groups[0].key = "k";
  groups[0].labels = {1, 1.2, 1.2};
  bound::choose_representatives(groups, 0.5);
  Json bound{{"space_version", "v1"}, {"key", "structural"}, {"report", bound::overall_bound(groups, 0.5).to_json()}};
  bound["report"]["bound"] = 1.2;
  const Json r = build_report(eval, bound);
  CHECK(r.at("comparison").at("inversion") == true);
  CHECK(r.at("comparison").at("model_p50") == 1.0);
  CHECK(r.at("comparison").at("ratio").get<double>() == doctest::Approx(1 / 1.2));

  CHECK(report_markdown(r).find("INVERSION") != std::string::npos);
  bound["report"]["bound"] = 1.0;
  const Json ok = build_report(eval, bound);
  CHECK(ok.at("comparison").at("inversion") == false);
  CHECK(report_markdown(ok).find("INVERSION") == std::string::npos);

  bound["space_version"] = "v2";
  CHECK_THROWS_WITH(build_report(eval, bound), doctest::Contains("version mismatch"));
}

TEST_CASE("atomic writes replace the whole file") {
  const fs::path dir = scratch("atomic");
  write_file_atomic(dir / "x.txt", "first version, longer");
  write_file_atomic(dir / "x.txt", "second");
  CHECK(slurp(dir / "x.txt") == "second");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli: eval before training fails with a structured error") {
  const fs::path dir = scratch("cli_eval");
  const auto r = cli("eval --workdir " + (dir / "work").string() + kSmall, dir);
  CHECK(r.status != 0);
  const Json err = Json::parse(r.err);
  CHECK(err.at("error").at("stage") == "eval");
  CHECK(err.at("error").at("message") == "model artifact missing");

  const auto usage = cli("no-such-stage", dir);
  CHECK(usage.status == 2);
  CHECK(Json::parse(usage.err).at("error").at("type") == "usage");

  const auto bad = cli("synth --workdir " + (dir / "work").string() + " --set synth.duplicate_fraction=2", dir);
  CHECK(bad.status == 1);
  CHECK(Json::parse(bad.err).contains("error"));
  fs::remove_all(dir);
}

TEST_CASE("cli: end-to-end runs are reproducible") {
  const fs::path dir = scratch("cli_e2e");
  std::vector<std::string> hashes;
  for (const char* name : {"a", "b"}) {
    const std::string wd = " --workdir " + (dir / name).string() + kSmall;
    REQUIRE(cli("train-gbt" + wd, dir).status == 0);
    REQUIRE(cli("eval" + wd, dir).status == 0);
    const auto r = cli("report" + wd, dir);
    REQUIRE(r.status == 0);
    CHECK(Json::parse(r.out).at("status") == "ok");
    hashes.push_back(sha256_hex(slurp(dir / name / "report.json")));
  }
  CHECK(hashes[0] == hashes[1]);

  // Re-running a stage with an unchanged config rewrites identical bytes.
  const std::string wd = " --workdir " + (dir / "a").string() + kSmall;
  const std::string model = slurp(dir / "a" / "model_gbt.json");
  REQUIRE(cli("train-gbt" + wd, dir).status == 0);
  CHECK(slurp(dir / "a" / "model_gbt.json") == model);

  const Json report = Json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report.at("bound").at("approximate") == true);
  CHECK(report.at("comparison").at("model_p50").get<double>() >= 1.0);
  const Json manifest = Json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("stages").contains("synth"));
  CHECK(manifest.at("stages").contains("report"));
  fs::remove_all(dir);
}

TEST_CASE("runner from a log file") {
  const fs::path dir = scratch("runner_log");
  write_log_file(dir / "input.jsonl", fixtures::synth_records(300, 12));
  auto config = load_config(std::nullopt, {"gbt.rounds=10"});
  config.input_log = (dir / "input.jsonl").string();
  config.workdir = (dir / "work").string();
  Runner runner(config);
  runner.run("train-gbt");
  runner.run("eval");
  CHECK(fs::exists(dir / "work" / "eval.json"));
  CHECK(fs::exists(dir / "work" / "clean_report.json"));
  CHECK_THROWS_AS(runner.run("fly"), StageError);
  fs::remove_all(dir);
}
