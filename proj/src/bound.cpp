#include "planperf/bound.hpp"

#include <algorithm>
#include <exception>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "planperf/eval.hpp"
#include "planperf/hashing.hpp"

namespace planperf::bound {

std::vector<Group> group_by_encoded_form(std::span<const QueryRecord> records, const EncodingSpace& space,
                                         const GroupOptions& options) {
  std::vector<std::string> keys(records.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(records.size()); ++i) {
    try {
      const auto& plan = records[static_cast<std::size_t>(i)].plan;
      keys[static_cast<std::size_t>(i)] =
          options.key == KeyKind::Structural ? encoded_form_key(encode_plan_structural(plan, space, options.structural))
                                             : flat_form_key(encode_plan_flat(plan, space));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double label = options.target == Target::Latency ? records[i].latency_ms : records[i].cpu_ms;
    auto [it, inserted] = index.try_emplace(keys[i], groups.size());
    if (inserted) groups.push_back(Group{std::move(keys[i]), {}, std::nullopt, 0});
    groups[it->second].labels.push_back(label);
  }
  return groups;
}

Representative select_representative(std::span<const double> labels, double q) {
  if (labels.empty()) throw std::invalid_argument("select_representative needs labels");
  for (double y : labels) {
    if (!(y > 0)) throw std::invalid_argument("labels must be positive");
  }
  std::vector<double> candidates(labels.begin(), labels.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const std::size_t k = eval::nearest_rank(labels.size(), q);
  std::vector<double> errors(labels.size());
  Representative best{candidates.front(), 0};
  bool first = true;
  for (double p : candidates) {
    for (std::size_t i = 0; i < labels.size(); ++i) errors[i] = eval::q_error(p, labels[i]);
    std::nth_element(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(k - 1), errors.end());
    const double value = errors[k - 1];
    if (first || value < best.group_quantile) {
      best = {p, value};
      first = false;
    }
  }
  return best;
}

void choose_representatives(std::vector<Group>& groups, double q) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(groups.size()); ++i) {
    try {
      auto& g = groups[static_cast<std::size_t>(i)];
      const auto r = select_representative(g.labels, q);
      g.chosen = r.value;
      g.group_quantile = r.group_quantile;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

namespace serial {

void choose_representatives(std::vector<Group>& groups, double q) {
  for (auto& g : groups) {
    const auto r = select_representative(g.labels, q);
    g.chosen = r.value;
    g.group_quantile = r.group_quantile;
  }
}

}  // namespace serial

BoundReport overall_bound(const std::vector<Group>& groups, double q) {
  if (groups.empty()) throw std::invalid_argument("overall_bound needs at least one group");
  BoundReport report;
  report.q = q;
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (!g.chosen) throw std::invalid_argument("group has no representative");
    if (g.labels.empty()) throw std::invalid_argument("group has no labels");
    GroupSummary s;
    s.key_hash = sha256_hex(g.key).substr(0, 16);
    s.size = g.labels.size();
    const auto [lo, hi] = std::minmax_element(g.labels.begin(), g.labels.end());
    s.min = *lo;
    s.max = *hi;
    s.range = s.max - s.min;
    s.ratio = s.max / s.min;
    s.chosen = *g.chosen;
    s.group_quantile = g.group_quantile;
    for (double y : g.labels) pooled.push_back(eval::q_error(*g.chosen, y));
    auto& c = report.collisions;
    ++c.groups;
    if (s.size == 1) ++c.singletons;
    else c.colliding_records += s.size;
    c.largest_group = std::max(c.largest_group, s.size);
    report.groups.push_back(std::move(s));
  }
  report.records = pooled.size();
  report.bound = eval::quantile(pooled, q);
  return report;
}

Json BoundReport::to_json() const {
  Json gs = Json::array();
  for (const auto& g : groups) {
    gs.push_back(Json{{"key_hash", g.key_hash}, {"size", g.size},   {"min", g.min},
                      {"max", g.max},           {"range", g.range}, {"ratio", g.ratio},
                      {"p_i", g.chosen},        {"group_quantile", g.group_quantile}});
  }
  return Json{{"approximate", true},
              {"quantile", q},
              {"records", records},
              {"bound", bound},
              {"collisions",
               {{"groups", collisions.groups},
                {"singletons", collisions.singletons},
                {"largest_group", collisions.largest_group},
                {"colliding_records", collisions.colliding_records}}},
              {"groups", std::move(gs)}};
}

std::string BoundReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17) << "key_hash,size,min,max,range,p_i\n";
  for (const auto& g : groups) {
    os << g.key_hash << ',' << g.size << ',' << g.min << ',' << g.max << ',' << g.range << ',' << g.chosen << '\n';
  }
  return os.str();
}

}  // namespace planperf::bound
