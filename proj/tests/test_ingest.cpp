#include "doctest.h"
#include "fixtures.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "planperf/ingest.hpp"

using namespace planperf;
using fixtures::node;
using fixtures::scan;

namespace {

const char* kLine =
    R"({"query_id":"q1","latency_ms":12.5,"cpu_ms":40,"client":"etl","scanned_bytes":800,"system_tables_only":false,)"
    R"("plan":{"kind":"Output","layout":["Integer"],"table":null,"strategy":{},"input_rows":null,"input_bytes":null,)"
    R"("out_rows":3,"out_bytes":24,"children":[{"kind":"Scan","layout":["Integer"],"table":"orders","strategy":{},)"
    R"("input_rows":100,"input_bytes":800,"out_rows":3,"out_bytes":24,"children":[]}]}})";

QueryRecord with_latency(const std::string& id, double latency, double scanned = 1e9) {
  auto r = fixtures::record(node("Output", {scan("t", {"Integer"}, 10, scanned)}), id, latency);
  return r;
}

}  // namespace

TEST_CASE("empty input parses to nothing") {
  std::istringstream in("");
  const auto r = parse_log(in);
  CHECK(r.records.empty());
  CHECK(r.errors.empty());
}

TEST_CASE("a valid line round-trips bit-exactly") {
  const auto r = parse_lines({kLine});
  REQUIRE(r.records.size() == 1);
  CHECK(r.errors.empty());
  const std::string once = write_record(r.records[0]);
  const auto again = parse_lines({once});
  REQUIRE(again.records.size() == 1);
  CHECK(write_record(again.records[0]) == once);
  CHECK(r.records[0].plan.children[0].table == "orders");
  CHECK(r.records[0].plan.children[0].node_id == 1);
}

TEST_CASE("unknown fields are preserved on rewrite") {
  Json j = Json::parse(kLine);
  j["team"] = "ads";
  j["plan"]["hint"] = Json{{"x", 1}};
  const auto r = record_from_json(j);
  const Json out = record_to_json(r);
  CHECK(out.at("team") == "ads");
  CHECK(out.at("plan").at("hint").at("x") == 1);
}

TEST_CASE("bad lines are reported with line numbers and skipped") {
  Json neg = Json::parse(kLine);
  neg["latency_ms"] = -1;
  const auto r = parse_lines({kLine, neg.dump(), "", "{not json", kLine});
  CHECK(r.records.size() == 2);
  REQUIRE(r.errors.size() == 2);
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[0].message.find("latency_ms") != std::string::npos);
  CHECK(r.errors[1].line == 4);
}

TEST_CASE("parallel parse matches the serial reference") {
  const auto records = fixtures::synth_records(500, 3);
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(write_record(r));
  lines[17] = "garbage";
  const auto a = parse_lines(lines);
  const auto b = serial::parse_lines(lines);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(write_record(a.records[i]) == write_record(b.records[i]));
  REQUIRE(a.errors.size() == 1);
  CHECK(a.errors[0].line == b.errors[0].line);
}

TEST_CASE("log file round trip and unreadable file") {
  const auto records = fixtures::synth_records(50, 4);
  const auto path = std::filesystem::temp_directory_path() / "planperf_test_ingest.jsonl";
  write_log_file(path, records);
  const auto back = parse_log_file(path);
  REQUIRE(back.records.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(write_record(back.records[i]) == write_record(records[i]));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_log_file(path), std::runtime_error);
}

TEST_CASE("cleaning rules") {
  CleaningRules rules;
  rules.excluded_clients = {"notebook"};

  // 1 KB scanned in two hours: 7.2e6 ms / 1024 B > 1 ms/B.
  auto slow = with_latency("slow", 7.2e6, 1024);
  auto sys = with_latency("sys", 5);
  sys.system_tables_only = true;
  auto excluded = with_latency("nb", 5);
  excluded.client = "notebook";
  auto ok = with_latency("ok", 5);
  auto zero_scan = with_latency("zero", 0.5, 0);

  const std::vector<QueryRecord> input{slow, sys, excluded, ok, zero_scan};
  const auto result = clean(input, rules);
  REQUIRE(result.kept.size() == 2);
  CHECK(result.kept[0].query_id == "ok");
  CHECK(result.kept[1].query_id == "zero");
  REQUIRE(result.dropped.size() == 3);
  CHECK(result.dropped[0].rule == kRuleScanLatencyRatio);
  CHECK(result.dropped[1].rule == kRuleSystemTablesOnly);
  CHECK(result.dropped[2].rule == kRuleExcludedClient);
  CHECK(result.kept.size() + result.dropped.size() == input.size());

  const auto again = clean(result.kept, rules);
  CHECK(again.kept.size() == result.kept.size());
  CHECK(again.dropped.empty());

  rules.drop_system_table_only = false;
  CHECK(clean({sys}, rules).kept.size() == 1);
  rules.scan_latency_ratio_threshold = 0;
  CHECK_THROWS(clean({ok}, rules));
}

TEST_CASE("latency buckets are half-open") {
  const std::vector<double> b{10, 100};
  CHECK(latency_bucket(9.99, b) == 0);
  CHECK(latency_bucket(10, b) == 1);
  CHECK(latency_bucket(99, b) == 1);
  CHECK(latency_bucket(100, b) == 2);
}

TEST_CASE("biased sampling") {
  std::vector<QueryRecord> input;
  for (int i = 0; i < 900; ++i) input.push_back(with_latency("s" + std::to_string(i), 1 + i % 5));
  for (int i = 0; i < 100; ++i) input.push_back(with_latency("l" + std::to_string(i), 1000 + i));

  SamplingPolicy policy{{100}, {100, 100}, 9};
  const auto out = biased_sample(input, policy);
  CHECK(out.size() == 200);  // sum of min(quota, population)
  std::size_t long_out = 0;
  for (const auto& r : out) long_out += r.latency_ms >= 100 ? 1 : 0;
  CHECK(static_cast<double>(long_out) / static_cast<double>(out.size()) > 0.1);

  const auto again = biased_sample(input, policy);
  REQUIRE(again.size() == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i].query_id == out[i].query_id);

  // Output keeps input order.
  std::vector<std::size_t> pos;
  for (const auto& r : out) {
    pos.push_back(static_cast<std::size_t>(
        std::find_if(input.begin(), input.end(), [&](const QueryRecord& x) { return x.query_id == r.query_id; }) -
        input.begin()));
  }
  CHECK(std::is_sorted(pos.begin(), pos.end()));

  SamplingPolicy big{{100}, {5000, 5000}, 9};
  CHECK(biased_sample(input, big).size() == input.size());

  SamplingPolicy bad{{100, 50}, {1, 1, 1}, 0};
  CHECK_THROWS(biased_sample(input, bad));
  SamplingPolicy short_quota{{100}, {1}, 0};
  CHECK_THROWS(biased_sample(input, short_quota));
}

TEST_CASE("split sizes follow the training/testing table") {
  const std::size_t n = 394920;
  const auto base = with_latency("x", 5);
  std::vector<QueryRecord> records(n, base);
  for (std::size_t i = 0; i < n; ++i) records[i].query_id = "q" + std::to_string(i);
  const auto s = split(records, 35050.0 / 394920.0, 1);
  CHECK(s.test.size() >= 35049);
  CHECK(s.test.size() <= 35051);
  CHECK(s.train.size() + s.test.size() == n);
}

TEST_CASE("split is a deterministic partition by query_id") {
  auto records = fixtures::synth_records(300, 8);
  records.push_back(records[5]);  // a second record under an existing id
  const auto a = split(records, 0.25, 77);
  const auto b = split(records, 0.25, 77);
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].query_id == b.test[i].query_id);

  std::multiset<std::string> all, parts;
  for (const auto& r : records) all.insert(r.query_id);
  std::set<std::string> train_ids, test_ids;
  for (const auto& r : a.train) {
    parts.insert(r.query_id);
    train_ids.insert(r.query_id);
  }
  for (const auto& r : a.test) {
    parts.insert(r.query_id);
    test_ids.insert(r.query_id);
  }
  CHECK(all == parts);
  for (const auto& id : test_ids) CHECK_FALSE(train_ids.contains(id));
  CHECK_THROWS(split(records, 0.0, 1));
  CHECK_THROWS(split(records, 1.0, 1));
}
