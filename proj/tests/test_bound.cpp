#include "doctest.h"
#include "fixtures.hpp"

#include <algorithm>
#include <random>

#include "planperf/bound.hpp"
#include "planperf/eval.hpp"

using namespace planperf;
using namespace planperf::bound;
using fixtures::node;
using fixtures::scan;

namespace {

Group make_group(std::vector<double> labels) {
  Group g;
  g.key = std::to_string(labels.size()) + ":" + std::to_string(labels.front());
  g.labels = std::move(labels);
  return g;
}

}  // namespace

TEST_CASE("representative selection examples") {
  auto one = select_representative(std::vector<double>{4}, 0.5);
  CHECK(one.value == 4);
  CHECK(one.group_quantile == 1);

  auto skew = select_representative(std::vector<double>{1, 1, 10}, 0.5);
  CHECK(skew.value == 1);
  CHECK(skew.group_quantile == 1);

  auto tie = select_representative(std::vector<double>{8, 2}, 0.5);
  CHECK(tie.value == 2);
  CHECK(tie.group_quantile == 1);

  CHECK_THROWS(select_representative(std::vector<double>{1, 0}, 0.5));
  CHECK_THROWS(select_representative(std::vector<double>{}, 0.5));
}

TEST_CASE("chosen representative is candidate-optimal") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 6);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> labels(1 + rng() % 9);
    for (auto& y : labels) y = std::exp(u(rng));
    for (double q : {0.5, 0.9}) {
      const auto rep = select_representative(labels, q);
      CHECK(std::find(labels.begin(), labels.end(), rep.value) != labels.end());
      for (double c : labels) {
        std::vector<double> errs;
        for (double y : labels) errs.push_back(eval::q_error(c, y));
        CHECK(rep.group_quantile <= eval::quantile(errs, q));
      }
    }
  }
}

TEST_CASE("overall bound examples") {
  std::vector<Group> singles{make_group({3}), make_group({9}), make_group({1})};
  choose_representatives(singles, 0.5);
  CHECK(overall_bound(singles, 0.5).bound == 1);

  std::vector<Group> groups{make_group({1, 100}), make_group({5})};
  choose_representatives(groups, 0.5);
  const auto r = overall_bound(groups, 0.5);
  CHECK(r.bound == 1);
  CHECK(r.records == 3);
  CHECK(r.collisions.groups == 2);
  CHECK(r.collisions.singletons == 1);
  CHECK(r.collisions.largest_group == 2);
  CHECK(r.collisions.colliding_records == 2);
  CHECK(r.groups[0].range == 99);
  CHECK(r.groups[0].ratio == 100);

  // Pooled {1, 1, 10, 1, 3}: P90 picks the 5th smallest.
  std::vector<Group> two{make_group({1, 1, 10}), make_group({3, 1})};
  choose_representatives(two, 0.9);
  std::reverse(two.begin(), two.end());
  CHECK(overall_bound(two, 0.9).bound == 10);

  std::vector<Group> unchosen{make_group({2})};
  CHECK_THROWS(overall_bound(unchosen, 0.5));
  CHECK_THROWS(overall_bound({}, 0.5));
}

TEST_CASE("parallel selection matches the serial reference") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 5);
  std::vector<Group> groups;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> labels(1 + rng() % 12);
    for (auto& y : labels) y = std::exp(u(rng));
    groups.push_back(make_group(labels));
  }
  auto a = groups, b = groups;
  choose_representatives(a, 0.5);
  serial::choose_representatives(b, 0.5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(*a[i].chosen == *b[i].chosen);
    CHECK(a[i].group_quantile == b[i].group_quantile);
  }
}

TEST_CASE("grouping by encoded form") {
  std::vector<QueryRecord> records{
      fixtures::record(node("Output", {scan("a", {"Integer"}, 10, 80)}), "q1", 5),
      fixtures::record(node("Output", {scan("a", {"Integer"}, 10, 80)}), "q2", 50),
      fixtures::record(node("Output", {scan("b", {"Integer"}, 10, 80)}), "q3", 7)};
  records[1].plan.extra["predicate"] = "x > 3";
  const auto space = fit_space(records);
  const auto groups = group_by_encoded_form(records, space);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].labels == std::vector<double>{5, 50});
  CHECK(groups[1].labels == std::vector<double>{7});

  GroupOptions cpu;
  cpu.target = Target::Cpu;
  CHECK(group_by_encoded_form(records, space, cpu)[0].labels == std::vector<double>{20, 20});

  const auto synth = fixtures::synth_records(400, 9, 0.3);
  const auto sspace = fit_space(synth, fixtures::synth_options());
  auto sg = group_by_encoded_form(synth, sspace);
  CHECK(sg.size() <= synth.size());
  std::size_t total = 0;
  bool spread = false;
  for (const auto& g : sg) {
    total += g.labels.size();
    const auto [lo, hi] = std::minmax_element(g.labels.begin(), g.labels.end());
    spread = spread || *hi > *lo;
  }
  CHECK(total == synth.size());
  CHECK(spread);

  GroupOptions flat;
  flat.key = KeyKind::Flat;
  CHECK(group_by_encoded_form(synth, sspace, flat).size() <= sg.size());
}

TEST_CASE("report exports") {
  std::vector<Group> groups{make_group({1, 4}), make_group({2})};
  choose_representatives(groups, 0.5);
  const auto r = overall_bound(groups, 0.5);
  const Json j = r.to_json();
  CHECK(j.at("approximate") == true);
  CHECK(j.at("bound") == 1.0);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("key_hash,size,min,max,range,p_i\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
