#include "planperf/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <variant>

namespace planperf {

namespace {

Json number_json(double x) {
  constexpr double kExactIntLimit = 9007199254740992.0;  // 2^53
  if (std::isfinite(x) && std::trunc(x) == x && std::abs(x) < kExactIntLimit) {
    return Json(static_cast<std::int64_t>(x));
  }
  return Json(x);
}

double require_number(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw std::invalid_argument(std::string("missing numeric field '") + key + "'");
  return it->get<double>();
}

std::optional<double> optional_number(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number or null");
  return it->get<double>();
}

const std::set<std::string>& known_node_keys() {
  static const std::set<std::string> keys{"kind",       "layout",    "table",    "strategy", "input_rows",
                                          "input_bytes", "out_rows", "out_bytes", "children", "node_id"};
  return keys;
}

const std::set<std::string>& known_record_keys() {
  static const std::set<std::string> keys{"query_id",      "latency_ms",         "cpu_ms", "client",
                                          "scanned_bytes", "system_tables_only", "plan"};
  return keys;
}

PlanNode node_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("plan node must be an object");
  PlanNode node;
  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw std::invalid_argument("plan node missing string 'kind'");
  node.kind = kind->get<std::string>();

  if (auto it = j.find("layout"); it != j.end() && !it->is_null()) {
    for (const auto& t : *it) node.layout.push_back(t.get<std::string>());
  }
  if (auto it = j.find("table"); it != j.end() && !it->is_null()) node.table = it->get<std::string>();
  if (auto it = j.find("strategy"); it != j.end() && !it->is_null()) {
    for (const auto& [slot, flag] : it->items()) node.strategy[slot] = flag.get<std::string>();
  }

  auto rows = optional_number(j, "input_rows");
  auto bytes = optional_number(j, "input_bytes");
  if (rows.has_value() != bytes.has_value()) throw std::invalid_argument("input_rows and input_bytes must be given together");
  if (rows) node.input_stats = InputStats{*rows, *bytes};

  auto out_rows = optional_number(j, "out_rows");
  auto out_bytes = optional_number(j, "out_bytes");
  if (out_rows.has_value() != out_bytes.has_value()) throw std::invalid_argument("out_rows and out_bytes must be given together");
  if (out_rows) node.metrics = NodeMetrics{*out_rows, *out_bytes};

  if (auto it = j.find("children"); it != j.end() && !it->is_null()) {
    for (const auto& c : *it) node.children.push_back(node_from_json(c));
  }
  for (const auto& [key, value] : j.items()) {
    if (!known_node_keys().contains(key)) node.extra[key] = value;
  }
  return node;
}

using LineOutcome = std::variant<std::monostate, QueryRecord, std::string>;

LineOutcome parse_one(const std::string& line) {
  if (line.find_first_not_of(" \t\r\n") == std::string::npos) return std::monostate{};
  try {
    QueryRecord rec = record_from_json(Json::parse(line));
    auto violations = validate(rec);
    if (!violations.empty()) {
      std::string msg;
      for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
      return msg;
    }
    return rec;
  } catch (const std::exception& e) {
    return std::string(e.what());
  }
}

ParseResult merge_outcomes(std::vector<LineOutcome>& outcomes) {
  ParseResult result;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (auto* rec = std::get_if<QueryRecord>(&outcomes[i])) {
      result.records.push_back(std::move(*rec));
    } else if (auto* err = std::get_if<std::string>(&outcomes[i])) {
      result.errors.push_back({i + 1, std::move(*err)});
    }
  }
  return result;
}

}  // namespace

PlanNode plan_from_json(const Json& j) {
  PlanNode root = node_from_json(j);
  renumber_preorder(root);
  return root;
}

Json plan_to_json(const PlanNode& node) {
  Json j = Json::object();
  j["kind"] = node.kind;
  j["layout"] = node.layout;
  j["table"] = node.table ? Json(*node.table) : Json(nullptr);
  Json strategy = Json::object();
  for (const auto& [slot, flag] : node.strategy) strategy[slot] = flag;
  j["strategy"] = std::move(strategy);
  j["input_rows"] = node.input_stats ? number_json(node.input_stats->rows) : Json(nullptr);
  j["input_bytes"] = node.input_stats ? number_json(node.input_stats->bytes) : Json(nullptr);
  j["out_rows"] = node.metrics ? number_json(node.metrics->out_rows) : Json(nullptr);
  j["out_bytes"] = node.metrics ? number_json(node.metrics->out_bytes) : Json(nullptr);
  Json children = Json::array();
  for (const auto& c : node.children) children.push_back(plan_to_json(c));
  j["children"] = std::move(children);
  for (const auto& [key, value] : node.extra.items()) j[key] = value;
  return j;
}

QueryRecord record_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("record must be a JSON object");
  QueryRecord rec;
  auto qid = j.find("query_id");
  if (qid == j.end() || !qid->is_string()) throw std::invalid_argument("missing string field 'query_id'");
  rec.query_id = qid->get<std::string>();
  rec.latency_ms = require_number(j, "latency_ms");
  rec.cpu_ms = require_number(j, "cpu_ms");
  rec.scanned_bytes = require_number(j, "scanned_bytes");
  if (auto it = j.find("client"); it != j.end() && !it->is_null()) rec.client = it->get<std::string>();
  if (auto it = j.find("system_tables_only"); it != j.end() && !it->is_null()) {
    rec.system_tables_only = it->get<bool>();
  }
  auto plan = j.find("plan");
  if (plan == j.end()) throw std::invalid_argument("missing field 'plan'");
  rec.plan = plan_from_json(*plan);
  rec.tables_accessed = leaf_tables(rec.plan);
  for (const auto& [key, value] : j.items()) {
    if (!known_record_keys().contains(key)) rec.extra[key] = value;
  }
  return rec;
}

Json record_to_json(const QueryRecord& record) {
  Json j = Json::object();
  j["query_id"] = record.query_id;
  j["latency_ms"] = number_json(record.latency_ms);
  j["cpu_ms"] = number_json(record.cpu_ms);
  j["client"] = record.client;
  j["scanned_bytes"] = number_json(record.scanned_bytes);
  j["system_tables_only"] = record.system_tables_only;
  j["plan"] = plan_to_json(record.plan);
  for (const auto& [key, value] : record.extra.items()) j[key] = value;
  return j;
}

std::string write_record(const QueryRecord& record) { return record_to_json(record).dump(); }

void write_log(std::ostream& out, const std::vector<QueryRecord>& records) {
  for (const auto& r : records) out << write_record(r) << '\n';
}

void write_log_file(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write log file: " + path.string());
  write_log(out, records);
}

ParseResult parse_lines(const std::vector<std::string>& lines) {
  std::vector<LineOutcome> outcomes(lines.size());
  const auto n = static_cast<std::int64_t>(lines.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    outcomes[static_cast<std::size_t>(i)] = parse_one(lines[static_cast<std::size_t>(i)]);
  }
  return merge_outcomes(outcomes);
}

namespace serial {
ParseResult parse_lines(const std::vector<std::string>& lines) {
  std::vector<LineOutcome> outcomes;
  outcomes.reserve(lines.size());
  for (const auto& line : lines) outcomes.push_back(parse_one(line));
  return merge_outcomes(outcomes);
}
}  // namespace serial

ParseResult parse_log(std::istream& in) {
  if (!in) throw std::runtime_error("log stream is not readable");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (in.bad()) throw std::runtime_error("I/O error while reading log stream");
  return parse_lines(lines);
}

ParseResult parse_log_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log file: " + path.string());
  return parse_log(in);
}

CleanResult clean(const std::vector<QueryRecord>& records, const CleaningRules& rules) {
  if (!(rules.scan_latency_ratio_threshold > 0)) {
    throw std::invalid_argument("scan_latency_ratio_threshold must be > 0");
  }
  CleanResult result;
  for (const auto& r : records) {
    const double ratio = r.latency_ms / std::max(r.scanned_bytes, 1.0);
    if (ratio > rules.scan_latency_ratio_threshold) {
      result.dropped.push_back({r, kRuleScanLatencyRatio});
    } else if (rules.excluded_clients.contains(r.client)) {
      result.dropped.push_back({r, kRuleExcludedClient});
    } else if (rules.drop_system_table_only && r.system_tables_only) {
      result.dropped.push_back({r, kRuleSystemTablesOnly});
    } else {
      result.kept.push_back(r);
    }
  }
  return result;
}

std::size_t latency_bucket(double latency_ms, const std::vector<double>& boundaries) {
  return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), latency_ms) -
                                  boundaries.begin());
}

std::vector<QueryRecord> biased_sample(const std::vector<QueryRecord>& records, const SamplingPolicy& policy) {
  const auto& b = policy.bucket_boundaries;
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (!(b[i - 1] < b[i])) throw std::invalid_argument("bucket boundaries must be strictly ascending");
  }
  if (policy.per_bucket_quota.size() != b.size() + 1) {
    throw std::invalid_argument("per_bucket_quota needs one entry per bucket (boundaries + 1)");
  }

  std::vector<std::vector<std::size_t>> buckets(b.size() + 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    buckets[latency_bucket(records[i].latency_ms, b)].push_back(i);
  }

  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < buckets.size(); ++k) {
    auto& members = buckets[k];
    const std::size_t quota = std::min(policy.per_bucket_quota[k], members.size());
    std::seed_seq seq{static_cast<std::uint32_t>(policy.seed), static_cast<std::uint32_t>(policy.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    // Partial Fisher-Yates: the first `quota` slots become the sample.
    for (std::size_t i = 0; i < quota; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
      std::swap(members[i], members[pick(rng)]);
    }
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota));
  }
  std::sort(chosen.begin(), chosen.end());

  std::vector<QueryRecord> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(records[i]);
  return out;
}

SplitResult split(const std::vector<QueryRecord>& records, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw std::invalid_argument("test_fraction must be in (0, 1)");

  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> group_size;
  for (const auto& r : records) {
    if (group_size[r.query_id]++ == 0) ids.push_back(r.query_id);
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto target = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(records.size())));
  std::set<std::string> test_ids;
  std::size_t taken = 0;
  for (const auto& id : ids) {
    if (taken >= target) break;
    test_ids.insert(id);
    taken += group_size[id];
  }

  SplitResult out;
  for (const auto& r : records) {
    (test_ids.contains(r.query_id) ? out.test : out.train).push_back(r);
  }
  return out;
}

}  // namespace planperf
