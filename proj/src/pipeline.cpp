#include "planperf/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "planperf/hashing.hpp"

namespace planperf::pipeline {

namespace fs = std::filesystem;

std::string to_string(Target t) { return t == Target::Latency ? "latency" : "cpu"; }

Target parse_target(const std::string& s) {
  if (s == "latency") return Target::Latency;
  if (s == "cpu") return Target::Cpu;
  throw std::invalid_argument("target must be \"latency\" or \"cpu\", got \"" + s + "\"");
}

double target_label(const QueryRecord& record, Target target) {
  return target == Target::Latency ? record.latency_ms : record.cpu_ms;
}

namespace {

Json without_seed(Json j) {
  j.erase("seed");
  return j;
}

std::string key_name(bound::KeyKind k) { return k == bound::KeyKind::Structural ? "structural" : "flat"; }

bound::KeyKind parse_key(const std::string& s) {
  if (s == "structural") return bound::KeyKind::Structural;
  if (s == "flat") return bound::KeyKind::Flat;
  throw std::invalid_argument("bound key must be \"structural\" or \"flat\"");
}

}  // namespace

void ExperimentConfig::check() const {
  if (classes == 1 || classes < 0) throw std::invalid_argument("classes must be 0 (regression) or >= 2");
  if (model != "gbt" && model != "tree-attention") {
    throw std::invalid_argument("model must be \"gbt\" or \"tree-attention\"");
  }
  if (!(test_fraction > 0 && test_fraction < 1)) throw std::invalid_argument("test_fraction must be in (0, 1)");
  if (!(valid_fraction > 0 && valid_fraction < 1)) throw std::invalid_argument("valid_fraction must be in (0, 1)");
  if (!(bound_quantile > 0 && bound_quantile <= 1)) throw std::invalid_argument("bound quantile must be in (0, 1]");
  synth.check();
  gbt.check();
  nn_model.check();
  nn_train.check();
}

Json ExperimentConfig::to_json() const {
  Json sampling_json = nullptr;
  if (sampling) {
    sampling_json = Json{{"bucket_boundaries", sampling->bucket_boundaries},
                         {"per_bucket_quota", sampling->per_bucket_quota}};
  }
  return Json{
      {"seed", seed},
      {"workdir", workdir},
      {"input_log", input_log ? Json(*input_log) : Json(nullptr)},
      {"target", to_string(target)},
      {"classes", classes},
      {"model", model},
      {"synth", without_seed(synth.to_json())},
      {"cleaning",
       {{"scan_latency_ratio_threshold", cleaning.scan_latency_ratio_threshold},
        {"excluded_clients", cleaning.excluded_clients},
        {"drop_system_table_only", cleaning.drop_system_table_only}}},
      {"sampling", sampling_json},
      {"split", {{"test_fraction", test_fraction}, {"valid_fraction", valid_fraction}}},
      {"encoding",
       {{"max_height", structural.max_height}, {"max_dist", structural.max_dist}, {"max_nodes", structural.max_nodes}}},
      {"gbt", without_seed(gbt.to_json())},
      {"nn", {{"model", without_seed(nn_model.to_json())}, {"train", without_seed(nn_train.to_json())}}},
      {"eval", {{"ranges", ranges.boundaries}}},
      {"bound", {{"quantile", bound_quantile}, {"key", key_name(bound_key)}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  static const std::set<std::string> known{"seed",  "workdir", "input_log", "target",   "classes", "model",
                                           "synth", "cleaning", "sampling", "split",    "encoding", "gbt",
                                           "nn",    "eval",     "bound"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key \"" + key + "\"");
  }
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.workdir = j.value("workdir", c.workdir);
  if (j.contains("input_log") && !j.at("input_log").is_null()) c.input_log = j.at("input_log").get<std::string>();
  c.target = parse_target(j.value("target", std::string("latency")));
  c.classes = j.value("classes", c.classes);
  c.model = j.value("model", c.model);
  if (j.contains("synth")) c.synth = synth::SynthConfig::from_json(j.at("synth"));
  if (j.contains("cleaning")) {
    const Json& cl = j.at("cleaning");
    c.cleaning.scan_latency_ratio_threshold =
        cl.value("scan_latency_ratio_threshold", c.cleaning.scan_latency_ratio_threshold);
    if (cl.contains("excluded_clients")) {
      c.cleaning.excluded_clients = cl.at("excluded_clients").get<std::set<std::string>>();
    }
    c.cleaning.drop_system_table_only = cl.value("drop_system_table_only", c.cleaning.drop_system_table_only);
  }
  if (j.contains("sampling") && !j.at("sampling").is_null()) {
    SamplingPolicy p;
    p.bucket_boundaries = j.at("sampling").at("bucket_boundaries").get<std::vector<double>>();
    p.per_bucket_quota = j.at("sampling").at("per_bucket_quota").get<std::vector<std::size_t>>();
    c.sampling = p;
  }
  if (j.contains("split")) {
    c.test_fraction = j.at("split").value("test_fraction", c.test_fraction);
    c.valid_fraction = j.at("split").value("valid_fraction", c.valid_fraction);
  }
  if (j.contains("encoding")) {
    const Json& e = j.at("encoding");
    c.structural.max_height = e.value("max_height", c.structural.max_height);
    c.structural.max_dist = e.value("max_dist", c.structural.max_dist);
    c.structural.max_nodes = e.value("max_nodes", c.structural.max_nodes);
  }
  if (j.contains("gbt")) c.gbt = gbt::GbtConfig::from_json(j.at("gbt"));
  if (j.contains("nn")) {
    const Json& n = j.at("nn");
    if (n.contains("model")) c.nn_model = nn::ModelConfig::from_json(n.at("model"));
    if (n.contains("train")) c.nn_train = nn::TrainConfig::from_json(n.at("train"));
  }
  if (j.contains("eval")) c.ranges.boundaries = j.at("eval").value("ranges", c.ranges.boundaries);
  if (j.contains("bound")) {
    c.bound_quantile = j.at("bound").value("quantile", c.bound_quantile);
    c.bound_key = parse_key(j.at("bound").value("key", std::string("structural")));
  }
  c.check();
  return c;
}

std::string ExperimentConfig::hash() const {
  Json j = to_json();
  j.erase("workdir");
  return sha256_hex(j.dump());
}

std::uint64_t ExperimentConfig::stream_seed(std::string_view stream) const { return derive_seed(seed, stream); }

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("empty key in override: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    Json& next = (*node)[key];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw std::invalid_argument("override path crosses a non-object: " + path);
    node = &next;
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  Json j = ExperimentConfig{}.to_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw std::runtime_error("cannot open config " + file->string());
    Json patch = Json::parse(in);
    j.merge_patch(patch);
  }
  for (const auto& o : overrides) apply_override(j, o);
  return ExperimentConfig::from_json(j);
}

SplitResult carve_validation(const std::vector<QueryRecord>& records, double fraction, std::uint64_t seed) {
  SplitResult s = split(records, fraction, seed);
  if (s.train.empty() || s.test.empty()) throw std::invalid_argument("too few records to carve a validation set");
  return s;
}

gbt::FeatureMatrix flat_matrix(std::span<const QueryRecord> records, const EncodingSpace& space) {
  gbt::FeatureMatrix m(space.flat_width(), flat_layout_id(space));
  m.values.reserve(records.size() * m.cols);
  for (const auto& r : records) m.add_row(encode_plan_flat(r.plan, space).to_vector());
  return m;
}

std::vector<nn::Sample> make_samples(std::span<const QueryRecord> records, const EncodingSpace& space, Target target,
                                     const LabelNormalizer& normalizer, const eval::ClassBoundaries* boundaries,
                                     const StructuralOptions& structural) {
  std::vector<nn::Sample> out(records.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(records.size()); ++i) {
    try {
      const auto& r = records[static_cast<std::size_t>(i)];
      auto& s = out[static_cast<std::size_t>(i)];
      const PlanNode plan = binarize(r.plan);
      s.encoding = encode_plan_structural(plan, space, structural);
      s.raw_label = target_label(r, target);
      s.label = normalizer.normalize(s.raw_label);
      if (boundaries) s.class_label = eval::class_assign(s.raw_label, *boundaries);
      const auto nodes = preorder(plan);
      s.node_targets.assign(2 * nodes.size(), 0.0);
      s.node_mask.assign(nodes.size(), 0);
      if (space.out_rows && space.out_bytes) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->metrics) continue;
          s.node_targets[2 * k] = normalize_metric(nodes[k]->metrics->out_rows, *space.out_rows);
          s.node_targets[2 * k + 1] = normalize_metric(nodes[k]->metrics->out_bytes, *space.out_bytes);
          s.node_mask[k] = 1;
        }
      }
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

namespace {

std::vector<double> labels_of(std::span<const QueryRecord> records, Target target) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(target_label(r, target));
  return out;
}

gbt::Dataset gbt_dataset(std::span<const QueryRecord> records, const EncodingSpace& space,
                         const std::vector<double>& targets) {
  return {flat_matrix(records, space), targets};
}

Json boundaries_json(const eval::ClassBoundaries& b) { return Json(b.boundaries); }

eval::ClassBoundaries boundaries_from_json(const Json& j) { return {j.get<std::vector<double>>()}; }

std::vector<double> gbt_predict(const gbt::GbtModel& model, const LabelNormalizer& normalizer,
                                std::span<const QueryRecord> test, const EncodingSpace& space) {
  const auto features = flat_matrix(test, space);
  std::vector<double> out(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    out[i] = normalizer.denormalize(model.predict_value(features.row(i), features.layout_id));
  }
  return out;
}

std::vector<int> gbt_classify(const gbt::GbtModel& model, std::span<const QueryRecord> test,
                              const EncodingSpace& space) {
  const auto features = flat_matrix(test, space);
  std::vector<int> out(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) out[i] = model.predict_class(features.row(i), features.layout_id).label;
  return out;
}

std::vector<double> nn_predict(const nn::TreeAttentionModel& model, const LabelNormalizer& normalizer,
                               std::span<const nn::Sample> samples) {
  std::vector<double> out(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = normalizer.denormalize(model.predict_normalized(samples[k].encoding));
  }
  return out;
}

std::vector<int> nn_classify(const nn::TreeAttentionModel& model, std::span<const nn::Sample> samples) {
  std::vector<int> out(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
    out[static_cast<std::size_t>(i)] = model.predict_class(samples[static_cast<std::size_t>(i)].encoding);
  }
  return out;
}

eval::EvalReport regression_eval(const std::vector<double>& predictions, std::span<const QueryRecord> test,
                                 Target target, const eval::RangeSpec& ranges) {
  std::vector<eval::PredictionPair> pairs;
  pairs.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) pairs.push_back({predictions[i], target_label(test[i], target)});
  return eval::regression_report(pairs, ranges);
}

ClassOutcome class_eval(std::vector<int> predictions, std::span<const QueryRecord> test, Target target,
                        const eval::ClassBoundaries& boundaries) {
  ClassOutcome out;
  out.boundaries = boundaries;
  out.predictions = std::move(predictions);
  std::vector<eval::ClassPair> pairs;
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.truth.push_back(eval::class_assign(target_label(test[i], target), boundaries));
    pairs.push_back({out.predictions[i], out.truth.back()});
  }
  out.report = eval::classification_report(pairs, boundaries.classes());
  return out;
}

nn::ModelConfig fit_model_config(nn::ModelConfig m, const StructuralOptions& s, int classes) {
  m.max_height = s.max_height;
  m.max_dist = s.max_dist;
  m.max_nodes = s.max_nodes;
  m.n_classes = classes;
  return m;
}

Json nn_model_json(const nn::TreeAttentionModel& model, const nn::TrainHistory& history, const StructuralOptions& s) {
  return Json{{"checkpoint", model.to_json()},
              {"history", history.to_json()},
              {"structural", {{"max_height", s.max_height}, {"max_dist", s.max_dist}, {"max_nodes", s.max_nodes}}}};
}

}  // namespace

RegressionOutcome run_gbt_regression(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                     const EncodingSpace& space, Target target, const GbtRun& run,
                                     const eval::RangeSpec& ranges) {
  const auto parts = carve_validation(train, run.valid_fraction, run.split_seed);
  const LabelNormalizer normalizer = LabelNormalizer::log_normalizer();
  auto normalized = [&](std::span<const QueryRecord> rs) {
    std::vector<double> t;
    for (double y : labels_of(rs, target)) t.push_back(normalizer.normalize(y));
    return t;
  };
  const auto fit = gbt_dataset(parts.train, space, normalized(parts.train));
  const auto valid = gbt_dataset(parts.test, space, normalized(parts.test));
  const gbt::GbtModel model = gbt::train_regression(fit, &valid, run.config);
  RegressionOutcome out;
  out.predictions = gbt_predict(model, normalizer, test, space);
  out.report = regression_eval(out.predictions, test, target, ranges);
  out.model = Json{{"kind", "gbt"},
                   {"task", "regression"},
                   {"target", to_string(target)},
                   {"normalizer", normalizer.to_json()},
                   {"model", model.to_json()}};
  return out;
}

ClassOutcome run_gbt_classification(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                    const EncodingSpace& space, Target target, int classes, const GbtRun& run) {
  const auto boundaries = eval::equal_frequency_boundaries(labels_of(train, target), classes);
  const auto parts = carve_validation(train, run.valid_fraction, run.split_seed);
  auto class_targets = [&](std::span<const QueryRecord> rs) {
    std::vector<double> t;
    for (double y : labels_of(rs, target)) t.push_back(eval::class_assign(y, boundaries));
    return t;
  };
  const auto fit = gbt_dataset(parts.train, space, class_targets(parts.train));
  const auto valid = gbt_dataset(parts.test, space, class_targets(parts.test));
  const gbt::GbtModel model = gbt::train_classifier(fit, &valid, boundaries.classes(), run.config);
  ClassOutcome out = class_eval(gbt_classify(model, test, space), test, target, boundaries);
  out.model = Json{{"kind", "gbt"},
                   {"task", "classification"},
                   {"target", to_string(target)},
                   {"boundaries", boundaries_json(boundaries)},
                   {"model", model.to_json()}};
  return out;
}

RegressionOutcome run_nn_regression(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                    const EncodingSpace& space, Target target, const NnRun& run,
                                    const eval::RangeSpec& ranges) {
  const auto parts = carve_validation(train, run.valid_fraction, run.split_seed);
  const auto normalizer = LabelNormalizer::fit_minmaxlog(labels_of(parts.train, target));
  const auto fit = make_samples(parts.train, space, target, normalizer, nullptr, run.structural);
  const auto valid = make_samples(parts.test, space, target, normalizer, nullptr, run.structural);
  nn::TreeAttentionModel model(fit_model_config(run.model, run.structural, 0), space);
  const auto history = nn::train(model, fit, valid, run.train, normalizer);
  const auto test_samples = make_samples(test, space, target, normalizer, nullptr, run.structural);
  RegressionOutcome out;
  out.predictions = nn_predict(model, normalizer, test_samples);
  out.report = regression_eval(out.predictions, test, target, ranges);
  out.model = Json{{"kind", "tree-attention"},
                   {"task", "regression"},
                   {"target", to_string(target)},
                   {"normalizer", normalizer.to_json()}};
  out.model.update(nn_model_json(model, history, run.structural));
  return out;
}

ClassOutcome run_nn_classification(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& test,
                                   const EncodingSpace& space, Target target, int classes, const NnRun& run) {
  const auto boundaries = eval::equal_frequency_boundaries(labels_of(train, target), classes);
  const auto parts = carve_validation(train, run.valid_fraction, run.split_seed);
  const auto normalizer = LabelNormalizer::log_normalizer();
  const auto fit = make_samples(parts.train, space, target, normalizer, &boundaries, run.structural);
  const auto valid = make_samples(parts.test, space, target, normalizer, &boundaries, run.structural);
  nn::TreeAttentionModel model(fit_model_config(run.model, run.structural, boundaries.classes()), space);
  const auto history = nn::train(model, fit, valid, run.train, normalizer);
  const auto test_samples = make_samples(test, space, target, normalizer, &boundaries, run.structural);
  ClassOutcome out = class_eval(nn_classify(model, test_samples), test, target, boundaries);
  out.model = Json{{"kind", "tree-attention"},
                   {"task", "classification"},
                   {"target", to_string(target)},
                   {"boundaries", boundaries_json(boundaries)}};
  out.model.update(nn_model_json(model, history, run.structural));
  return out;
}

Json build_report(const Json& eval_artifact, const Json& bound_artifact) {
  if (eval_artifact.at("space_version") != bound_artifact.at("space_version")) {
    throw std::invalid_argument("encoding space version mismatch between eval and bound artifacts");
  }
  Json report{{"config_hash", eval_artifact.at("config_hash")},
              {"space_version", eval_artifact.at("space_version")},
              {"target", eval_artifact.at("target")},
              {"model", eval_artifact.at("model")},
              {"task", eval_artifact.at("task")},
              {"eval", eval_artifact.at("report")}};
  const Json& b = bound_artifact.at("report");
  report["bound"] = Json{{"approximate", true},
                         {"key", bound_artifact.at("key")},
                         {"quantile", b.at("quantile")},
                         {"value", b.at("bound")},
                         {"collisions", b.at("collisions")}};
  if (eval_artifact.at("task") == "regression") {
    const double model_p50 = eval_artifact.at("report").at("overall").at("p50").get<double>();
    const double bound_value = b.at("bound").get<double>();
    report["comparison"] = Json{{"model_p50", model_p50},
                                {"bound", bound_value},
                                {"ratio", model_p50 / bound_value},
                                {"inversion", model_p50 < bound_value}};
  }
  return report;
}

std::string report_markdown(const Json& report) {
  std::ostringstream os;
  os << "# planperf report\n\n"
     << "- model: " << report.at("model").get<std::string>() << "\n"
     << "- target: " << report.at("target").get<std::string>() << "\n"
     << "- task: " << report.at("task").get<std::string>() << "\n"
     << "- config hash: `" << report.at("config_hash").get<std::string>() << "`\n"
     << "- encoding space: `" << report.at("space_version").get<std::string>() << "`\n\n";
  const Json& b = report.at("bound");
  os << std::fixed << std::setprecision(3);
  if (report.contains("comparison")) {
    const Json& c = report.at("comparison");
    if (c.at("inversion").get<bool>()) {
      os << "> **INVERSION: model P50 q-error " << c.at("model_p50").get<double>()
         << " is below the approximate lower bound " << c.at("bound").get<double>()
         << ". Check that the model and the bound use the same encoding key.**\n\n";
    }
    os << "| Metric | Value |\n|---|---|\n"
       << "| Model P50 q-error | " << c.at("model_p50").get<double>() << " |\n"
       << "| Approximate lower bound (P" << static_cast<int>(b.at("quantile").get<double>() * 100) << ", "
       << b.at("key").get<std::string>() << " key) | " << c.at("bound").get<double>() << " |\n"
       << "| Model / bound | " << c.at("ratio").get<double>() << " |\n\n";
    const Json& e = report.at("eval");
    os << "## Q-error by latency range\n\n| Range | Count | P50 | P90 | P99 |\n|---|---|---|---|---|\n";
    for (const auto& bucket : e.at("buckets")) {
      os << "| [" << bucket.at("lower").get<double>() << ", ";
      if (bucket.at("upper").is_null()) os << "inf";
      else os << bucket.at("upper").get<double>();
      os << ") | " << bucket.at("count").get<std::size_t>() << " | ";
      if (bucket.at("q_error").is_null()) {
        os << "- | - | - |\n";
      } else {
        const Json& q = bucket.at("q_error");
        os << q.at("p50").get<double>() << " | " << q.at("p90").get<double>() << " | " << q.at("p99").get<double>()
           << " |\n";
      }
    }
    const Json& o = e.at("overall");
    os << "| overall | " << e.at("count").get<std::size_t>() << " | " << o.at("p50").get<double>() << " | "
       << o.at("p90").get<double>() << " | " << o.at("p99").get<double>() << " |\n";
  } else {
    const Json& e = report.at("eval");
    os << "| Metric | Value |\n|---|---|\n"
       << "| Accuracy | " << e.at("plain").at("accuracy").get<double>() << " |\n"
       << "| Mix accuracy | " << e.at("mix").at("accuracy").get<double>() << " |\n"
       << "| Approximate lower bound (regression) | " << b.at("value").get<double>() << " |\n";
  }
  const Json& c = b.at("collisions");
  os << "\n## Encoding collisions\n\n"
     << "- groups: " << c.at("groups").get<std::size_t>() << "\n"
     << "- singletons: " << c.at("singletons").get<std::size_t>() << "\n"
     << "- largest group: " << c.at("largest_group").get<std::size_t>() << "\n"
     << "- records in colliding groups: " << c.at("colliding_records").get<std::size_t>() << "\n";
  return os.str();
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth",     "ingest",   "clean", "sample", "split", "fit-encoding",
                                              "train-gbt", "train-nn", "eval",  "bound",  "report"};
  return names;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kRaw = "raw.jsonl";
constexpr const char* kClean = "clean.jsonl";
constexpr const char* kSampled = "sampled.jsonl";
constexpr const char* kTrain = "train.jsonl";
constexpr const char* kTest = "test.jsonl";
constexpr const char* kSpace = "encoding_space.json";

std::string log_text(const std::vector<QueryRecord>& records) {
  std::ostringstream os;
  write_log(os, records);
  return os.str();
}

std::string model_file(const std::string& model) {
  return model == "gbt" ? "model_gbt.json" : "model_nn.json";
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace

Runner::Runner(ExperimentConfig config) : config_(std::move(config)), hash_(config_.hash()) {
  if (config_.workdir.empty()) {
    const char* env = std::getenv("PLANPERF_WORKDIR");
    config_.workdir = env && *env ? env : "planperf_work";
  }
  workdir_ = config_.workdir;
  fs::create_directories(workdir_);
  if (fs::exists(workdir_ / kManifest)) {
    manifest_ = Json::parse(read(kManifest), nullptr, false);
    if (manifest_.is_discarded() || !manifest_.is_object()) manifest_ = Json::object();
  }
  if (!manifest_.contains("stages")) manifest_ = Json{{"stages", Json::object()}};
}

bool Runner::fresh(const std::string& stage) const {
  const Json& stages = manifest_.at("stages");
  if (!stages.contains(stage)) return false;
  const Json& entry = stages.at(stage);
  if (entry.at("config_hash") != hash_) return false;
  for (const auto& [name, digest] : entry.at("outputs").items()) {
    if (!fs::exists(workdir_ / name) || sha256_hex(read(name)) != digest.get<std::string>()) return false;
  }
  return true;
}

void Runner::ensure(const std::string& stage) {
  if (!fresh(stage)) run(stage);
}

void Runner::run(const std::string& stage) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end()) {
    throw StageError(stage, "unknown subcommand \"" + stage + "\"");
  }
  try {
    execute(stage);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void Runner::execute(const std::string& stage) {
  const std::string source = config_.input_log ? "ingest" : "synth";
  if (stage == "synth") return stage_synth();
  if (stage == "ingest") return stage_ingest();
  if (stage == "clean") {
    ensure(source);
    return stage_clean();
  }
  if (stage == "sample") {
    ensure("clean");
    return stage_sample();
  }
  if (stage == "split") {
    ensure("sample");
    return stage_split();
  }
  if (stage == "fit-encoding") {
    ensure("split");
    return stage_fit_encoding();
  }
  if (stage == "train-gbt") {
    ensure("fit-encoding");
    return stage_train_gbt();
  }
  if (stage == "train-nn") {
    ensure("fit-encoding");
    return stage_train_nn();
  }
  if (stage == "eval") {
    if (!fs::exists(workdir_ / model_file(config_.model))) throw StageError("eval", "model artifact missing");
    ensure("fit-encoding");
    return stage_eval();
  }
  if (stage == "bound") {
    ensure("fit-encoding");
    return stage_bound();
  }
  if (!fs::exists(workdir_ / "eval.json")) throw StageError("report", "eval artifact missing");
  ensure("bound");
  stage_report();
}

void Runner::write(const std::string& name, const std::string& content) {
  write_file_atomic(workdir_ / name, content);
}

std::string Runner::read(const std::string& name) const {
  std::ifstream in(workdir_ / name, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + (workdir_ / name).string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<QueryRecord> Runner::read_log(const std::string& name) const {
  ParseResult r = parse_log_file(workdir_ / name);
  if (!r.errors.empty()) {
    throw std::runtime_error(name + " line " + std::to_string(r.errors.front().line) + ": " + r.errors.front().message);
  }
  return std::move(r.records);
}

Json Runner::read_json(const std::string& name) const { return Json::parse(read(name)); }

Json Runner::stamp(Json body, const std::string& space_version) const {
  Json out{{"config_hash", hash_}};
  if (!space_version.empty()) out["space_version"] = space_version;
  out.update(body);
  return out;
}

EncodingSpace Runner::load_space() const { return EncodingSpace::from_json(read_json(kSpace).at("space")); }

void Runner::record(const std::string& stage, const std::vector<std::string>& outputs) {
  Json digests = Json::object();
  for (const auto& name : outputs) digests[name] = sha256_hex(read(name));
  manifest_["format"] = "planperf.manifest";
  manifest_["config_hash"] = hash_;
  manifest_["config"] = config_.to_json();
  manifest_["config"].erase("workdir");
  Json seeds = Json::object();
  for (const char* s : {"synth", "sample", "split", "valid", "gbt", "nn.init", "nn.train"}) {
    seeds[s] = config_.stream_seed(s);
  }
  manifest_["seeds"] = seeds;
  Json stages = manifest_.at("stages");
  stages[stage] = Json{{"config_hash", hash_}, {"outputs", digests}};
  manifest_.erase("stages");
  manifest_["stages"] = stages;
  write(kManifest, dump(manifest_));
}

void Runner::stage_synth() {
  synth::SynthConfig sc = config_.synth;
  sc.seed = config_.stream_seed("synth");
  write(kRaw, log_text(synth::generate(sc)));
  record("synth", {kRaw});
}

void Runner::stage_ingest() {
  if (!config_.input_log) throw std::invalid_argument("input_log is not configured");
  ParseResult r = parse_log_file(*config_.input_log);
  Json errors = Json::array();
  for (const auto& e : r.errors) errors.push_back(Json{{"line", e.line}, {"message", e.message}});
  write(kRaw, log_text(r.records));
  write("ingest_errors.json", dump(stamp(Json{{"parsed", r.records.size()}, {"errors", errors}})));
  record("ingest", {kRaw, "ingest_errors.json"});
}

void Runner::stage_clean() {
  const CleanResult r = clean(read_log(kRaw), config_.cleaning);
  Json by_rule = Json::object();
  for (const char* rule : {kRuleScanLatencyRatio, kRuleExcludedClient, kRuleSystemTablesOnly}) by_rule[rule] = 0;
  for (const auto& d : r.dropped) by_rule[d.rule] = by_rule[d.rule].get<int>() + 1;
  write(kClean, log_text(r.kept));
  write("clean_report.json", dump(stamp(Json{{"kept", r.kept.size()}, {"dropped", by_rule}})));
  record("clean", {kClean, "clean_report.json"});
}

void Runner::stage_sample() {
  auto records = read_log(kClean);
  if (config_.sampling) {
    SamplingPolicy p = *config_.sampling;
    p.seed = config_.stream_seed("sample");
    records = biased_sample(records, p);
  }
  write(kSampled, log_text(records));
  record("sample", {kSampled});
}

void Runner::stage_split() {
  const auto s = split(read_log(kSampled), config_.test_fraction, config_.stream_seed("split"));
  if (s.train.empty() || s.test.empty()) throw std::invalid_argument("split produced an empty side");
  write(kTrain, log_text(s.train));
  write(kTest, log_text(s.test));
  record("split", {kTrain, kTest});
}

void Runner::stage_fit_encoding() {
  FitOptions options;
  if (!config_.input_log) {
    options.operator_kinds = synth::operator_kinds();
    options.datatypes = synth::datatypes();
  }
  const EncodingSpace space = fit_space(read_log(kTrain), options);
  write(kSpace, dump(Json{{"config_hash", hash_}, {"version_hash", space.version()}, {"space", space.to_json()}}));
  record("fit-encoding", {kSpace});
}

void Runner::stage_train_gbt() {
  const EncodingSpace space = load_space();
  GbtRun run{config_.gbt, config_.valid_fraction, config_.stream_seed("valid")};
  run.config.seed = config_.stream_seed("gbt");
  const auto train = read_log(kTrain);
  const auto test = read_log(kTest);
  Json model = config_.classification()
                   ? run_gbt_classification(train, test, space, config_.target, config_.classes, run).model
                   : run_gbt_regression(train, test, space, config_.target, run, config_.ranges).model;
  write("model_gbt.json", dump(stamp(std::move(model), space.version())));
  record("train-gbt", {"model_gbt.json"});
}

void Runner::stage_train_nn() {
  const EncodingSpace space = load_space();
  NnRun run{config_.nn_model, config_.nn_train, config_.structural, config_.valid_fraction,
            config_.stream_seed("valid")};
  run.model.seed = config_.stream_seed("nn.init");
  run.train.seed = config_.stream_seed("nn.train");
  const auto train = read_log(kTrain);
  const auto test = read_log(kTest);
  Json model = config_.classification()
                   ? run_nn_classification(train, test, space, config_.target, config_.classes, run).model
                   : run_nn_regression(train, test, space, config_.target, run, config_.ranges).model;
  write("model_nn.json", dump(stamp(std::move(model), space.version())));
  record("train-nn", {"model_nn.json"});
}

void Runner::stage_eval() {
  const std::string file = model_file(config_.model);
  const Json artifact = read_json(file);
  const EncodingSpace space = load_space();
  if (!artifact.contains("space_version") || artifact.at("space_version") != space.version()) {
    throw std::invalid_argument("encoding space version mismatch between " + file + " and " + kSpace);
  }
  const Target target = parse_target(artifact.at("target").get<std::string>());
  const auto test = read_log(kTest);
  const bool classification = artifact.at("task") == "classification";
  Json body{{"model", config_.model}, {"target", to_string(target)}, {"task", artifact.at("task")}};
  std::string markdown;
  if (artifact.at("kind") == "gbt") {
    const auto model = gbt::GbtModel::from_json(artifact.at("model"));
    if (classification) {
      const auto out = class_eval(gbt_classify(model, test, space), test, target,
                                  boundaries_from_json(artifact.at("boundaries")));
      body["report"] = out.report.to_json();
      markdown = out.report.to_markdown();
    } else {
      const auto preds = gbt_predict(model, LabelNormalizer::from_json(artifact.at("normalizer")), test, space);
      const auto report = regression_eval(preds, test, target, config_.ranges);
      body["report"] = report.to_json();
      markdown = report.to_markdown();
    }
  } else {
    const auto model = nn::TreeAttentionModel::from_json(artifact.at("checkpoint"));
    const Json& s = artifact.at("structural");
    StructuralOptions structural{s.at("max_height").get<int>(), s.at("max_dist").get<int>(),
                                 s.at("max_nodes").get<std::size_t>()};
    if (classification) {
      const auto boundaries = boundaries_from_json(artifact.at("boundaries"));
      const auto samples =
          make_samples(test, space, target, LabelNormalizer::log_normalizer(), &boundaries, structural);
      const auto out = class_eval(nn_classify(model, samples), test, target, boundaries);
      body["report"] = out.report.to_json();
      markdown = out.report.to_markdown();
    } else {
      const auto normalizer = LabelNormalizer::from_json(artifact.at("normalizer"));
      const auto samples = make_samples(test, space, target, normalizer, nullptr, structural);
      const auto report = regression_eval(nn_predict(model, normalizer, samples), test, target, config_.ranges);
      body["report"] = report.to_json();
      markdown = report.to_markdown();
    }
  }
  write("eval.json", dump(stamp(std::move(body), space.version())));
  write("eval.md", markdown);
  record("eval", {"eval.json", "eval.md"});
}

void Runner::stage_bound() {
  const EncodingSpace space = load_space();
  std::vector<QueryRecord> records = read_log(kTrain);
  auto test = read_log(kTest);
  records.insert(records.end(), std::make_move_iterator(test.begin()), std::make_move_iterator(test.end()));
  bound::GroupOptions options;
  options.target = config_.target == Target::Latency ? bound::Target::Latency : bound::Target::Cpu;
  options.key = config_.bound_key;
  options.structural = config_.structural;
  auto groups = bound::group_by_encoded_form(records, space, options);
  bound::choose_representatives(groups, config_.bound_quantile);
  const bound::BoundReport report = bound::overall_bound(groups, config_.bound_quantile);
  write("bound.json", dump(stamp(Json{{"target", to_string(config_.target)},
                                      {"key", key_name(config_.bound_key)},
                                      {"scope", "train+test"},
                                      {"report", report.to_json()}},
                                 space.version())));
  write("bound_groups.csv", report.to_csv());
  record("bound", {"bound.json", "bound_groups.csv"});
}

void Runner::stage_report() {
  const Json report = build_report(read_json("eval.json"), read_json("bound.json"));
  write("report.json", dump(report));
  write("report.md", report_markdown(report));
  record("report", {"report.json", "report.md"});
}

}  // namespace planperf::pipeline
