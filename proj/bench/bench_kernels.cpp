// Serial reference vs OpenMP kernels. Threads come from OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <numeric>
#include <random>
#include <sstream>

#include "planperf/bound.hpp"
#include "planperf/gbt.hpp"
#include "planperf/ingest.hpp"
#include "planperf/pipeline.hpp"
#include "planperf/synth.hpp"

namespace {

using namespace planperf;

const std::vector<QueryRecord>& workload() {
  static const std::vector<QueryRecord> records = [] {
    synth::SynthConfig c;
    c.n_queries = 4000;
    c.seed = 7;
    c.duplicate_fraction = 0.6;
    return synth::generate(c);
  }();
  return records;
}

const EncodingSpace& space() {
  static const EncodingSpace s = [] {
    FitOptions o;
    o.operator_kinds = synth::operator_kinds();
    o.datatypes = synth::datatypes();
    return fit_space(workload(), o);
  }();
  return s;
}

struct SplitFixture {
  gbt::FeatureMatrix matrix = pipeline::flat_matrix(workload(), space());
  gbt::ColumnIndex index{matrix};
  std::vector<int> node_of_row = std::vector<int>(matrix.rows, 0);
  std::vector<double> grad = std::vector<double>(matrix.rows);
  std::vector<double> hess = std::vector<double>(matrix.rows, 1.0);
  std::vector<gbt::GradStats> totals;
  gbt::GbtConfig config;

  SplitFixture() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    gbt::GradStats t;
    for (auto& v : grad) {
      v = n(rng);
      t.grad += v;
      t.hess += 1.0;
    }
    totals.push_back(t);
  }
};

SplitFixture& split_fixture() {
  static SplitFixture f;
  return f;
}

void BM_GbtSplitsSerial(benchmark::State& state) {
  auto& f = split_fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(gbt::serial::find_level_splits(f.index, f.node_of_row, f.grad, f.hess, f.totals, f.config));
  }
}

void BM_GbtSplitsParallel(benchmark::State& state) {
  auto& f = split_fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(gbt::find_level_splits(f.index, f.node_of_row, f.grad, f.hess, f.totals, f.config));
  }
}

struct NnFixture {
  std::vector<nn::Sample> samples;
  nn::TreeAttentionModel model;
  std::vector<std::size_t> batch;
};

NnFixture& nn_fixture() {
  static NnFixture f = [] {
    const std::vector<QueryRecord> head(workload().begin(), workload().begin() + 64);
    std::vector<double> labels;
    for (const auto& r : head) labels.push_back(r.latency_ms);
    const auto norm = LabelNormalizer::fit_minmaxlog(labels);
    auto samples = pipeline::make_samples(head, space(), pipeline::Target::Latency, norm, nullptr, {});
    std::vector<std::size_t> batch(samples.size());
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    return NnFixture{std::move(samples), nn::TreeAttentionModel(nn::ModelConfig{}, space()), std::move(batch)};
  }();
  return f;
}

void BM_NnBatchSerial(benchmark::State& state) {
  auto& f = nn_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(nn::serial::batch_gradient(f.model, f.samples, f.batch, 1.0));
}

void BM_NnBatchParallel(benchmark::State& state) {
  auto& f = nn_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(nn::batch_gradient(f.model, f.samples, f.batch, 1.0));
}

std::vector<bound::Group>& bound_groups() {
  static std::vector<bound::Group> g = bound::group_by_encoded_form(workload(), space());
  return g;
}

void BM_BoundSelectSerial(benchmark::State& state) {
  for (auto _ : state) {
    auto groups = bound_groups();
    bound::serial::choose_representatives(groups, 0.5);
    benchmark::DoNotOptimize(groups);
  }
}

void BM_BoundSelectParallel(benchmark::State& state) {
  for (auto _ : state) {
    auto groups = bound_groups();
    bound::choose_representatives(groups, 0.5);
    benchmark::DoNotOptimize(groups);
  }
}

const std::vector<std::string>& log_lines() {
  static const std::vector<std::string> lines = [] {
    std::vector<std::string> out;
    for (const auto& r : workload()) out.push_back(write_record(r));
    return out;
  }();
  return lines;
}

void BM_ParseSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(serial::parse_lines(log_lines()));
}

void BM_ParseParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(parse_lines(log_lines()));
}

}  // namespace

BENCHMARK(BM_GbtSplitsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GbtSplitsParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NnBatchSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NnBatchParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BoundSelectSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BoundSelectParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParseSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParseParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
