#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planperf/plan.hpp"

namespace planperf::synth {

struct SynthConfig {
  std::size_t n_queries = 1000;
  int max_depth = 6;
  int n_tables = 20;
  int n_operator_kinds = 7;  // 2..7, enabled in the order of operator_kinds()
  double latency_mu = 0.0;
  double latency_sigma = 1.0;  // spread of table sizes in log space
  double hidden_noise_sigma = 0.3;
  double cpu_latency_extra_noise = 0.0;
  double duplicate_fraction = 0.3;
  std::uint64_t seed = 0;

  void check() const;
  Json to_json() const;
  static SynthConfig from_json(const Json& j);
};

// Scan, Join, Filter, Project, Aggregate, Exchange, Output.
const std::vector<std::string>& operator_kinds();
const std::vector<std::string>& datatypes();

// Deterministic for a fixed config. A duplicate_fraction share of records
// reuse an earlier plan verbatim with a fresh hidden factor.
std::vector<QueryRecord> generate(const SynthConfig& config);

}  // namespace planperf::synth
