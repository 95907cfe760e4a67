#include "planperf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace planperf::eval {

double q_error(double pred, double label) {
  if (!(pred > 0) || !(label > 0)) throw std::invalid_argument("q_error needs positive inputs");
  return std::max(pred, label) / std::min(pred, label);
}

std::size_t nearest_rank(std::size_t n, double q) {
  if (n == 0) throw std::invalid_argument("quantile of an empty list");
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("quantile q must be in (0, 1]");
  const double x = q * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(x));
  // q * n can land one ulp above an integer (0.1 * 30).
  if (k > 1 && static_cast<double>(k - 1) >= x - 1e-9 * std::max(1.0, x)) --k;
  return std::clamp<std::size_t>(k, 1, n);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  return sorted[nearest_rank(sorted.size(), q) - 1];
}

double quantile(std::span<const double> values, double q) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

namespace {

QuantileSummary summarize(std::vector<double> errors) {
  std::sort(errors.begin(), errors.end());
  return {quantile_sorted(errors, 0.5), quantile_sorted(errors, 0.9), quantile_sorted(errors, 0.99)};
}

Json summary_json(const QuantileSummary& s) { return Json{{"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}}; }

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v, 2) : "-"; }

void check_ascending(const std::vector<double>& b, const char* what) {
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!(b[i] > 0)) throw std::invalid_argument(std::string(what) + " must be positive");
    if (i > 0 && !(b[i - 1] < b[i])) throw std::invalid_argument(std::string(what) + " must be strictly ascending");
  }
}

ClassTable class_table(std::span<const ClassPair> pairs, int k) {
  const auto kk = static_cast<std::size_t>(k);
  std::vector<std::size_t> tp(kk, 0), predicted(kk, 0), actual(kk, 0);
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    ++predicted[static_cast<std::size_t>(p.pred)];
    ++actual[static_cast<std::size_t>(p.truth)];
    if (p.pred == p.truth) {
      ++tp[static_cast<std::size_t>(p.pred)];
      ++correct;
    }
  }
  ClassTable table;
  table.accuracy = pairs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs.size());
  for (std::size_t c = 0; c < kk; ++c) {
    ClassMetrics m;
    m.support = actual[c];
    if (predicted[c] > 0) m.precision = static_cast<double>(tp[c]) / static_cast<double>(predicted[c]);
    if (actual[c] > 0) m.recall = static_cast<double>(tp[c]) / static_cast<double>(actual[c]);
    if (m.precision && m.recall && *m.precision + *m.recall > 0) {
      m.f1 = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    table.per_class.push_back(m);
  }
  return table;
}

Json table_json(const ClassTable& t) {
  Json classes = Json::array();
  for (const auto& m : t.per_class) {
    classes.push_back(Json{{"precision", optional_json(m.precision)},
                           {"recall", optional_json(m.recall)},
                           {"f1", optional_json(m.f1)},
                           {"support", m.support}});
  }
  return Json{{"accuracy", t.accuracy}, {"classes", std::move(classes)}};
}

void table_markdown(std::ostringstream& os, const std::string& title, const ClassTable& t) {
  os << "### " << title << "\n\n|           |";
  for (std::size_t c = 0; c < t.per_class.size(); ++c) os << ' ' << std::setw(5) << (c + 1) << " |";
  os << "\n|-----------|";
  for (std::size_t c = 0; c < t.per_class.size(); ++c) os << "-------|";
  os << '\n';
  auto row = [&](const char* name, auto get) {
    os << "| " << std::left << std::setw(9) << name << std::right << " |";
    for (const auto& m : t.per_class) os << ' ' << std::setw(5) << fmt_opt(get(m)) << " |";
    os << '\n';
  };
  row("Precision", [](const ClassMetrics& m) { return m.precision; });
  row("Recall", [](const ClassMetrics& m) { return m.recall; });
  row("F1 Score", [](const ClassMetrics& m) { return m.f1; });
  os << "\nAccuracy: " << fmt(t.accuracy, 2) << "\n\n";
}

}  // namespace

EvalReport regression_report(std::span<const PredictionPair> pairs, const RangeSpec& ranges) {
  if (pairs.empty()) throw std::invalid_argument("regression_report needs at least one pair");
  check_ascending(ranges.boundaries, "range boundaries");
  std::vector<std::vector<double>> per_bucket(ranges.buckets());
  std::vector<double> all;
  all.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double e = q_error(std::max(p.pred, kPredictionEpsilon), p.actual);
    all.push_back(e);
    const auto b = static_cast<std::size_t>(
        std::upper_bound(ranges.boundaries.begin(), ranges.boundaries.end(), p.actual) - ranges.boundaries.begin());
    per_bucket[b].push_back(e);
  }
  EvalReport report;
  report.count = pairs.size();
  report.overall = summarize(all);
  for (std::size_t b = 0; b < per_bucket.size(); ++b) {
    BucketReport br;
    br.lower = b == 0 ? 0.0 : ranges.boundaries[b - 1];
    if (b < ranges.boundaries.size()) br.upper = ranges.boundaries[b];
    br.count = per_bucket[b].size();
    if (br.count > 0) br.q_error = summarize(std::move(per_bucket[b]));
    report.buckets.push_back(br);
  }
  return report;
}

Json EvalReport::to_json() const {
  Json buckets_json = Json::array();
  for (const auto& b : buckets) {
    buckets_json.push_back(Json{{"lower", b.lower},
                                {"upper", optional_json(b.upper)},
                                {"count", b.count},
                                {"q_error", b.q_error ? summary_json(*b.q_error) : Json(nullptr)}});
  }
  return Json{{"count", count}, {"overall", summary_json(overall)}, {"buckets", std::move(buckets_json)}};
}

std::string EvalReport::to_markdown() const {
  std::ostringstream os;
  os << "| Range (actual)          | Count  |    P50 |    P90 |    P99 |\n"
     << "|-------------------------|--------|--------|--------|--------|\n";
  for (const auto& b : buckets) {
    std::string range = "[" + fmt(b.lower, 1) + ", " + (b.upper ? fmt(*b.upper, 1) : std::string("inf")) + ")";
    os << "| " << std::left << std::setw(23) << range << std::right << " | " << std::setw(6) << b.count << " | ";
    if (b.q_error) {
      os << std::setw(6) << fmt(b.q_error->p50) << " | " << std::setw(6) << fmt(b.q_error->p90) << " | "
         << std::setw(6) << fmt(b.q_error->p99) << " |\n";
    } else {
      os << std::setw(6) << "-" << " | " << std::setw(6) << "-" << " | " << std::setw(6) << "-" << " |\n";
    }
  }
  os << "| " << std::left << std::setw(23) << "overall" << std::right << " | " << std::setw(6) << count << " | "
     << std::setw(6) << fmt(overall.p50) << " | " << std::setw(6) << fmt(overall.p90) << " | " << std::setw(6)
     << fmt(overall.p99) << " |\n";
  return os.str();
}

int class_assign(double value, const ClassBoundaries& boundaries) {
  return static_cast<int>(std::upper_bound(boundaries.boundaries.begin(), boundaries.boundaries.end(), value) -
                          boundaries.boundaries.begin());
}

ClassBoundaries equal_frequency_boundaries(std::span<const double> labels, int k) {
  if (k < 2) throw std::invalid_argument("equal_frequency_boundaries needs K >= 2");
  if (labels.empty()) throw std::invalid_argument("equal_frequency_boundaries needs labels");
  std::vector<double> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) throw std::invalid_argument("constant labels cannot be split into classes");
  ClassBoundaries out;
  for (int i = 1; i < k; ++i) {
    const double b = quantile_sorted(sorted, static_cast<double>(i) / k);
    // A boundary at the minimum would leave class 0 empty.
    if (b <= sorted.front()) continue;
    if (out.boundaries.empty() || out.boundaries.back() < b) out.boundaries.push_back(b);
  }
  return out;
}

ClassReport classification_report(std::span<const ClassPair> pairs, int k) {
  if (k < 1) throw std::invalid_argument("classification_report needs K >= 1");
  for (const auto& p : pairs) {
    if (p.pred < 0 || p.pred >= k || p.truth < 0 || p.truth >= k) {
      throw std::invalid_argument("class index out of range");
    }
  }
  ClassReport report;
  report.plain = class_table(pairs, k);
  std::vector<ClassPair> mixed(pairs.begin(), pairs.end());
  for (auto& p : mixed) {
    if (std::abs(p.pred - p.truth) == 1) p.truth = p.pred;
  }
  report.mix = class_table(mixed, k);
  return report;
}

Json ClassReport::to_json() const { return Json{{"plain", table_json(plain)}, {"mix", table_json(mix)}}; }

std::string ClassReport::to_markdown() const {
  std::ostringstream os;
  table_markdown(os, std::to_string(plain.per_class.size()) + " classes", plain);
  table_markdown(os, std::to_string(mix.per_class.size()) + " classes mix", mix);
  return os.str();
}

}  // namespace planperf::eval
