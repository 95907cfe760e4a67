#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "planperf/plan.hpp"

namespace planperf {

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseResult {
  std::vector<QueryRecord> records;
  std::vector<LineError> errors;
};

// JSON <-> record. Node ids are reassigned in preorder on read; unknown keys
// are kept in `extra` and written back after the known keys.
QueryRecord record_from_json(const Json& j);
Json record_to_json(const QueryRecord& record);
PlanNode plan_from_json(const Json& j);
Json plan_to_json(const PlanNode& node);

std::string write_record(const QueryRecord& record);
void write_log(std::ostream& out, const std::vector<QueryRecord>& records);
void write_log_file(const std::filesystem::path& path, const std::vector<QueryRecord>& records);

// Parses JSONL. Malformed or invalid lines are reported with their line
// number and skipped; blank lines are ignored.
ParseResult parse_lines(const std::vector<std::string>& lines);
ParseResult parse_log(std::istream& in);
// Throws std::runtime_error when the file cannot be opened.
ParseResult parse_log_file(const std::filesystem::path& path);

namespace serial {
ParseResult parse_lines(const std::vector<std::string>& lines);
}

struct CleaningRules {
  double scan_latency_ratio_threshold = 1.0;  // ms per scanned byte
  std::set<std::string> excluded_clients;
  bool drop_system_table_only = true;
};

inline constexpr const char* kRuleScanLatencyRatio = "scan_latency_ratio";
inline constexpr const char* kRuleExcludedClient = "excluded_client";
inline constexpr const char* kRuleSystemTablesOnly = "system_tables_only";

struct DroppedRecord {
  QueryRecord record;
  std::string rule;
};

struct CleanResult {
  std::vector<QueryRecord> kept;
  std::vector<DroppedRecord> dropped;
};

CleanResult clean(const std::vector<QueryRecord>& records, const CleaningRules& rules);

struct SamplingPolicy {
  std::vector<double> bucket_boundaries;  // ms, strictly ascending
  std::vector<std::size_t> per_bucket_quota;  // bucket_boundaries.size() + 1 entries
  std::uint64_t seed = 0;
};

// Bucket index of `latency_ms`: buckets are [b_{i-1}, b_i).
std::size_t latency_bucket(double latency_ms, const std::vector<double>& boundaries);

// Uniform sampling without replacement inside each latency bucket, up to the
// bucket's quota. Output keeps input order.
std::vector<QueryRecord> biased_sample(const std::vector<QueryRecord>& records, const SamplingPolicy& policy);

struct SplitResult {
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> test;
};

// Partition by query_id; the test side receives round(test_fraction * n)
// records (whole query_id groups, so it may overshoot by a group). Both sides
// keep input order.
SplitResult split(const std::vector<QueryRecord>& records, double test_fraction, std::uint64_t seed);

}  // namespace planperf
