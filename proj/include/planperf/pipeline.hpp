#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "planperf/bound.hpp"
#include "planperf/encoding.hpp"
#include "planperf/eval.hpp"
#include "planperf/gbt.hpp"
#include "planperf/ingest.hpp"
#include "planperf/synth.hpp"
#include "planperf/tree_attention.hpp"

namespace planperf::pipeline {

enum class Target { Latency, Cpu };

std::string to_string(Target t);
Target parse_target(const std::string& s);
double target_label(const QueryRecord& record, Target target);

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string workdir;                    // not part of the config hash
  std::optional<std::string> input_log;  // ingest source; synth when absent
  Target target = Target::Latency;
  int classes = 0;  // 0 for regression, else K
  std::string model = "gbt";  // "gbt" or "tree-attention"
  synth::SynthConfig synth;
  CleaningRules cleaning;
  std::optional<SamplingPolicy> sampling;
  double test_fraction = 0.1;
  double valid_fraction = 0.1;
  StructuralOptions structural;
  gbt::GbtConfig gbt;
  nn::ModelConfig nn_model;
  nn::TrainConfig nn_train;
  eval::RangeSpec ranges{{10, 100, 1000, 10000}};
  double bound_quantile = 0.5;
  bound::KeyKind bound_key = bound::KeyKind::Structural;

  bool classification() const { return classes > 0; }
  void check() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  // SHA-256 of the canonical config with the workdir removed.
  std::string hash() const;
  std::uint64_t stream_seed(std::string_view stream) const;
};

// Dotted-path override ("gbt.rounds=50"); the value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_override(Json& config, const std::string& assignment);

// Defaults, then the file (if any), then overrides.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides);

// Splits off a validation share by query_id; returns {fit, valid}.
SplitResult carve_validation(const std::vector<QueryRecord>& records, double fraction, std::uint64_t seed);

gbt::FeatureMatrix flat_matrix(std::span<const QueryRecord> records, const EncodingSpace& space);

// Structural encodings with normalized plan labels, class labels (when
// `boundaries` is given) and normalized operator metric targets.
std::vector<nn::Sample> make_samples(std::span<const QueryRecord> records, const EncodingSpace& space, Target target,
                                     const LabelNormalizer& normalizer, const eval::ClassBoundaries* boundaries,
                                     const StructuralOptions& structural);

struct RegressionOutcome {
  std::vector<double> predictions;  // denormalized, aligned with the test records
  eval::EvalReport report;
  Json model;
};

struct ClassOutcome {
  eval::ClassBoundaries boundaries;
  std::vector<int> predictions;
  std::vector<int> truth;
  eval::ClassReport report;
  Json model;
};

struct GbtRun {
  gbt::GbtConfig config;
  double valid_fraction = 0.1;
  std::uint64_t split_seed = 0;
};

struct NnRun {
  nn::ModelConfig model;
  nn::TrainConfig train;
  StructuralOptions structural;
  double valid_fraction = 0.1;
  std::uint64_t split_seed = 0;
};

RegressionOutcome run_gbt_regression(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                     const EncodingSpace& space, Target target, const GbtRun& run,
                                     const eval::RangeSpec& ranges);
ClassOutcome run_gbt_classification(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                    const EncodingSpace& space, Target target, int classes, const GbtRun& run);
RegressionOutcome run_nn_regression(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                    const EncodingSpace& space, Target target, const NnRun& run,
                                    const eval::RangeSpec& ranges);
ClassOutcome run_nn_classification(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                   const EncodingSpace& space, Target target, int classes, const NnRun& run);

// Merges an eval artifact and a bound artifact; flags an inversion when the
// model's overall P50 is below the bound.
Json build_report(const Json& eval_artifact, const Json& bound_artifact);
std::string report_markdown(const Json& report);

// Failure carrying the stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

const std::vector<std::string>& stage_names();

// Runs stages against a workdir. Artifacts are written atomically and record
// the config hash in the run manifest. Training stages build missing or stale
// data stages first; eval requires a trained model.
class Runner {
 public:
  explicit Runner(ExperimentConfig config);

  void run(const std::string& stage);
  const std::filesystem::path& workdir() const { return workdir_; }

 private:
  bool fresh(const std::string& stage) const;
  void ensure(const std::string& stage);
  void execute(const std::string& stage);
  void record(const std::string& stage, const std::vector<std::string>& outputs);
  void write(const std::string& name, const std::string& content);
  std::string read(const std::string& name) const;
  std::vector<QueryRecord> read_log(const std::string& name) const;
  Json read_json(const std::string& name) const;
  Json stamp(Json body, const std::string& space_version = {}) const;
  EncodingSpace load_space() const;

  void stage_synth();
  void stage_ingest();
  void stage_clean();
  void stage_sample();
  void stage_split();
  void stage_fit_encoding();
  void stage_train_gbt();
  void stage_train_nn();
  void stage_eval();
  void stage_bound();
  void stage_report();

  ExperimentConfig config_;
  std::string hash_;
  std::filesystem::path workdir_;
  Json manifest_;
};

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace planperf::pipeline
