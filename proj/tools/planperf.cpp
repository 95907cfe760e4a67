#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "planperf/pipeline.hpp"

namespace pp = planperf::pipeline;

namespace {

void print_error(const std::string& stage, const std::string& type, const std::string& message) {
  const planperf::Json j{{"error", {{"stage", stage}, {"type", type}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planperf: query performance prediction from execution plans"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string workdir;
  for (const auto& name : pp::stage_names()) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    sub->add_option("--config", config_path, "Experiment config (JSON)");
    sub->add_option("--set", overrides, "Override a config field, key=value (repeatable)");
    sub->add_option("--workdir", workdir, "Artifact directory (default: $PLANPERF_WORKDIR)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("", "usage", e.what());
    return 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    std::optional<std::filesystem::path> file;
    if (!config_path.empty()) file = config_path;
    if (!workdir.empty()) overrides.push_back("workdir=\"" + workdir + "\"");
    pp::ExperimentConfig config = pp::load_config(file, overrides);
    pp::Runner runner(std::move(config));
    runner.run(stage);
    std::cout << planperf::Json{{"stage", stage}, {"status", "ok"}, {"workdir", runner.workdir().string()}}.dump()
              << '\n';
    return 0;
  } catch (const pp::StageError& e) {
    print_error(e.stage(), "stage", e.what());
  } catch (const std::exception& e) {
    print_error(stage, "config", e.what());
  }
  return 1;
}
