#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>
#include <random>

using namespace planperf;
using fixtures::node;
using fixtures::scan;

namespace {

FitOptions six_types() {
  FitOptions o;
  o.operator_kinds = {"Scan", "Join", "Filter", "Exchange", "Aggregate", "Output"};
  o.datatypes = {"Integer", "Double", "String", "Date", "Map", "Array"};
  return o;
}

// Tables in preorder: A, B, A, C. Rows span [10, 1000].
std::vector<QueryRecord> small_corpus() {
  return {fixtures::record(node("Join", {scan("A", {"Integer"}, 10, 80), scan("B", {"Double"}, 100, 800)}), "q1"),
          fixtures::record(node("Join", {scan("A", {"Integer"}, 1000, 8000), scan("C", {"Map"}, 50, 3200)}), "q2")};
}

PlanNode join(PlanNode l, PlanNode r, const std::string& dist) {
  PlanNode j = node("Join", {std::move(l), std::move(r)});
  j.strategy["join-distribution"] = dist;
  return j;
}

}  // namespace

TEST_CASE("fit_space dictionaries and normalizers") {
  const auto space = fit_space(small_corpus(), six_types());
  CHECK(space.tables == std::vector<std::string>{"A", "B", "C"});
  CHECK(space.table_code("A") == 1);
  CHECK(space.table_code("B") == 2);
  CHECK(space.table_code("C") == 3);
  CHECK(space.table_code("unseen") == 0);
  CHECK(space.input_rows.log_min == std::log(10.0));
  CHECK(space.input_rows.log_max == std::log(1000.0));

  const auto single = fit_space({fixtures::record(node("Output", {scan("A", {"Integer"}, 5, 40)}), "q")}, six_types());
  CHECK(single.tables.size() == 1);

  std::vector<QueryRecord> no_stats{fixtures::record(node("Output", {node("Values", {}, {"Integer"})}), "q")};
  CHECK_THROWS(fit_space(no_stats));
  CHECK_THROWS(fit_space({}));
}

TEST_CASE("normalize_stat boundaries") {
  const LogMinMax n{std::log(10.0), std::log(1000.0)};
  CHECK(normalize_stat(10, n) == 0.0);
  CHECK(normalize_stat(1000, n) == 1.0);
  CHECK(normalize_stat(100, n) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(normalize_stat(1, n) == 0.0);
  CHECK(normalize_stat(1e6, n) == 1.0);
  CHECK(normalize_stat(0, n) == 0.0);
  double prev = 0;
  for (double x = 1; x < 1e5; x *= 1.7) {
    const double v = normalize_stat(x, n);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("node encoding components") {
  const auto space = fit_space(small_corpus(), six_types());
  const auto layout = encode_node(scan("A", {"Integer", "Integer", "Double", "Map"}, 100, 800), space);
  CHECK(layout.e_l == std::vector<double>{2, 1, 0, 0, 1, 0});
  CHECK(layout.e_t == std::vector<double>{1, 0, 0, 0, 0, 0});
  CHECK(layout.e_tn == 1);
  CHECK(layout.e_is[0] == doctest::Approx(0.5).epsilon(1e-12));

  const auto j = encode_node(join(scan("A", {"Integer"}, 1, 1), scan("B", {"Integer"}, 1, 1), "partitioned"), space);
  CHECK(j.e_s == std::vector<double>{1, 0});
  CHECK(j.e_is == std::array<double, 2>{0, 0});
  CHECK(j.e_tn == 0);
  const auto b = encode_node(join(scan("A", {"Integer"}, 1, 1), scan("B", {"Integer"}, 1, 1), "broadcast"), space);
  CHECK(b.e_s == std::vector<double>{0, 0});

  CHECK(encode_node(scan("Z", {"Integer"}, 10, 80), space).e_tn == 0);
  CHECK(layout.concat.size() == space.node_width());
  CHECK_THROWS(encode_node(node("Window", {}, {"Integer"}), space));
  CHECK_THROWS(encode_node(scan("A", {"Blob"}, 1, 1), space));
}

TEST_CASE("structural encoding on a three-node tree") {
  const auto space = fit_space(small_corpus(), six_types());
  const PlanNode p = node("Join", {scan("A", {"Integer"}, 10, 80), scan("B", {"Double"}, 100, 800)});
  const auto e = encode_plan_structural(p, space);
  REQUIRE(e.size() == 3);
  CHECK(e.parent == std::vector<int>{-1, 0, 0});
  CHECK(e.height == std::vector<int>{0, 1, 1});
  CHECK(e.dist_at(1, 2) == 1);
  CHECK(e.dist_at(2, 3) == 2);
  CHECK(e.dist_at(0, 2) == e.super_code());
  // Root attends to every real node; leaves only to themselves.
  for (std::size_t j = 0; j < e.dim(); ++j) CHECK(e.attends(0, j));
  CHECK(e.attends(1, 1));
  CHECK(e.attends(1, 2));
  CHECK(e.attends(1, 3));
  CHECK_FALSE(e.attends(1, 0));
  CHECK(e.attends(2, 2));
  CHECK_FALSE(e.attends(2, 1));
  CHECK_FALSE(e.attends(2, 3));

  StructuralOptions tight;
  tight.max_nodes = 2;
  CHECK_THROWS_WITH(encode_plan_structural(p, space, tight), doctest::Contains("max_nodes=2"));
}

TEST_CASE("structural invariants on synthetic plans") {
  const auto records = fixtures::synth_records(300, 5);
  const auto space = fit_space(records, fixtures::synth_options());
  StructuralOptions opts;
  opts.max_dist = 4;
  opts.max_height = 3;
  for (const auto& r : records) {
    const auto e = encode_plan_structural(r.plan, space, opts);
    const std::size_t d = e.dim();
    CHECK(e.height[0] == 0);
    for (std::size_t i = 1; i < d; ++i) {
      CHECK(e.attends(0, i));
      CHECK(e.attends(i, i));
      for (std::size_t j = 1; j < d; ++j) {
        CHECK(e.dist_at(i, j) == e.dist_at(j, i));
        CHECK(e.dist_at(i, j) <= opts.max_dist);
        for (std::size_t k = 1; k < d; ++k) {
          if (e.attends(i, j) && e.attends(j, k)) CHECK(e.attends(i, k));
        }
      }
    }
    for (int h : e.height) CHECK(h <= opts.max_height);
    for (const auto& n : e.nodes) {
      double ones = 0;
      for (double t : n.e_t) ones += t;
      CHECK(ones == 1.0);
      CHECK(n.e_is[0] >= 0.0);
      CHECK(n.e_is[1] <= 1.0);
    }
  }
}

TEST_CASE("flat encoding") {
  FitOptions o = six_types();
  o.operator_kinds = {"Exchange", "Scan", "Join", "Filter", "Output"};
  PlanNode fig = node("Exchange", {join(node("Exchange", {join(scan("a", {"Integer"}, 400, 3000),
                                                               scan("b", {"Double"}, 500, 4000), "partitioned")}),
                                        scan("c", {"Integer"}, 400, 3444), "broadcast")});
  const auto space = fit_space({fixtures::record(fig, "q")}, o);
  const auto v = encode_plan_flat(fig, space).to_vector();
  REQUIRE(v.size() == 9);
  CHECK(v[0] == 2);
  CHECK(v[1] == 3);
  CHECK(v[2] == 2);
  CHECK(v[5] == 1300);
  CHECK(v[6] == doctest::Approx(1300.0 / 3).epsilon(1e-12));
  CHECK(v[7] == 10444);
  CHECK(v[8] == doctest::Approx(10444.0 / 3).epsilon(1e-12));

  const auto empty = encode_plan_flat(node("Output", {node("Filter", {}, {"Integer"})}), space);
  CHECK(empty.total_rows == 0);
  CHECK(empty.avg_rows == 0);
  CHECK(empty.missing_stats);

  // Duplicating a subtree doubles its kinds' counts; child order does not matter.
  PlanNode sub = join(scan("a", {"Integer"}, 1, 8), scan("b", {"Integer"}, 2, 16), "partitioned");
  const auto once = encode_plan_flat(node("Exchange", {sub}), space);
  const auto twice = encode_plan_flat(node("Exchange", {sub, sub}), space);
  CHECK(twice.op_counts[1] == 2 * once.op_counts[1]);
  CHECK(twice.op_counts[2] == 2 * once.op_counts[2]);
  PlanNode swapped = join(scan("b", {"Integer"}, 2, 16), scan("a", {"Integer"}, 1, 8), "partitioned");
  CHECK(encode_plan_flat(swapped, space).to_vector() == encode_plan_flat(sub, space).to_vector());
}

TEST_CASE("label normalizers") {
  const auto log = LabelNormalizer::log_normalizer();
  CHECK(log.normalize(1) == 0.0);
  const std::vector<double> labels{1000, 86400000};
  const auto mm = LabelNormalizer::fit_minmaxlog(labels);
  CHECK(mm.normalize(86400000) == 1.0);
  CHECK(mm.normalize(1000) == 0.0);
  CHECK(mm.normalize(1e9) > 1.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 30);
  for (int i = 0; i < 1000; ++i) {
    const double y = std::exp(u(rng));
    CHECK(mm.denormalize(mm.normalize(y)) == doctest::Approx(y).epsilon(1e-9));
    CHECK(log.denormalize(log.normalize(y)) == doctest::Approx(y).epsilon(1e-9));
  }
  CHECK_THROWS(mm.normalize(0));
  CHECK_THROWS(log.normalize(-1));
  const auto back = LabelNormalizer::from_json(mm.to_json());
  CHECK(back.log_min == mm.log_min);
  CHECK(back.log_max == mm.log_max);
}

TEST_CASE("metric normalization floors at one") {
  const LogMinMax n{0.0, std::log(100.0)};
  CHECK(normalize_metric(0, n) == 0.0);
  CHECK(normalize_metric(1, n) == 0.0);
  CHECK(normalize_metric(100, n) == 1.0);
  CHECK(normalize_metric(1e4, n) == doctest::Approx(2.0));
}

TEST_CASE("encoded form keys") {
  const auto space = fit_space(small_corpus(), six_types());
  const PlanNode a = node("Join", {scan("A", {"Integer"}, 10, 80), scan("B", {"Double"}, 100, 800)});
  PlanNode pred = a;
  pred.extra["predicate"] = "x > 5";
  PlanNode other = a;
  other.children[1].table = "C";
  const auto key = [&](const PlanNode& p) { return encoded_form_key(encode_plan_structural(p, space)); };
  CHECK(key(a) == key(a));
  CHECK(key(a) == key(pred));
  CHECK(key(a) != key(other));
  PlanNode swapped = node("Join", {a.children[1], a.children[0]});
  CHECK(key(a) != key(swapped));
}

TEST_CASE("encoding space round trip") {
  const auto records = fixtures::synth_records(200, 6);
  const auto space = fit_space(records, fixtures::synth_options());
  const std::string text = space.to_json().dump();
  const auto back = EncodingSpace::from_json(Json::parse(text));
  CHECK(back.to_json().dump() == text);
  CHECK(back.version() == space.version());
  for (const auto& r : records) {
    CHECK(encoded_form_key(encode_plan_structural(r.plan, back)) ==
          encoded_form_key(encode_plan_structural(r.plan, space)));
  }
  Json bad = space.to_json();
  bad["format"] = "other";
  CHECK_THROWS(EncodingSpace::from_json(bad));
}
