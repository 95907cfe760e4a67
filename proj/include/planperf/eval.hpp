#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "planperf/plan.hpp"

namespace planperf::eval {

inline constexpr double kPredictionEpsilon = 1e-9;

// max(pred, label) / min(pred, label). Throws for non-positive input.
double q_error(double pred, double label);

// Nearest-rank: the ceil(q * n)-th smallest value. Throws on empty input or
// q outside (0, 1].
double quantile(std::span<const double> values, double q);

// Same, for input that is already sorted ascending.
double quantile_sorted(std::span<const double> sorted, double q);

// 1-based nearest rank ceil(q * n), clamped to [1, n].
std::size_t nearest_rank(std::size_t n, double q);

struct RangeSpec {
  std::vector<double> boundaries;  // strictly ascending, positive
  std::size_t buckets() const { return boundaries.size() + 1; }
};

struct ClassBoundaries {
  std::vector<double> boundaries;
  int classes() const { return static_cast<int>(boundaries.size()) + 1; }
};

struct QuantileSummary {
  double p50 = 0;
  double p90 = 0;
  double p99 = 0;
};

struct BucketReport {
  double lower = 0;  // inclusive; 0 for the first bucket
  std::optional<double> upper;  // exclusive; absent for the last bucket
  std::size_t count = 0;
  std::optional<QuantileSummary> q_error;
};

struct EvalReport {
  std::size_t count = 0;
  QuantileSummary overall;
  std::vector<BucketReport> buckets;

  Json to_json() const;
  std::string to_markdown() const;
};

struct PredictionPair {
  double pred = 0;
  double actual = 0;
};

// Predictions are clamped to kPredictionEpsilon; buckets use the actual value.
EvalReport regression_report(std::span<const PredictionPair> pairs, const RangeSpec& ranges);

// Buckets are half-open [b_{i-1}, b_i); values >= the last boundary fall in
// the last class.
int class_assign(double value, const ClassBoundaries& boundaries);

// Boundaries at nearest-rank i/K quantiles, deduplicated. Throws when the
// labels are constant or K < 2.
ClassBoundaries equal_frequency_boundaries(std::span<const double> labels, int k);

struct ClassMetrics {
  std::optional<double> precision;  // absent with no predictions of the class
  std::optional<double> recall;     // absent with no true members
  std::optional<double> f1;         // absent when undefined or p + r = 0
  std::size_t support = 0;
};

struct ClassTable {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0;
};

struct ClassReport {
  ClassTable plain;
  // Predictions within one class of the truth count as correct for the
  // predicted class.
  ClassTable mix;

  Json to_json() const;
  std::string to_markdown() const;
};

struct ClassPair {
  int pred = 0;
  int truth = 0;
};

ClassReport classification_report(std::span<const ClassPair> pairs, int k);

}  // namespace planperf::eval
