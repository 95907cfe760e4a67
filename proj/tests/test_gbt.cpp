#include "doctest.h"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "planperf/gbt.hpp"

using namespace planperf;
using namespace planperf::gbt;

namespace {

Dataset random_dataset(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale_col0 = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Dataset d{FeatureMatrix(cols, "test"), {}};
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> x(cols);
    for (auto& v : x) v = std::round(n(rng) * 20) / 20;
    const double y = std::sin(x[0]) + 0.5 * x[1] + 0.1 * n(rng);
    x[0] *= scale_col0;
    d.features.add_row(x);
    d.targets.push_back(y);
  }
  return d;
}

Dataset separable(std::size_t rows) {
  Dataset d{FeatureMatrix(2, "test"), {}};
  for (std::size_t r = 0; r < rows; ++r) {
    const double bit = static_cast<double>(r % 2);
    d.features.add_row(std::vector<double>{bit, static_cast<double>(r % 7)});
    d.targets.push_back(bit);
  }
  return d;
}

}  // namespace

TEST_CASE("constant labels") {
  Dataset d{FeatureMatrix(1, "test"), {}};
  for (int i = 0; i < 20; ++i) {
    d.features.add_row(std::vector<double>{static_cast<double>(i)});
    d.targets.push_back(std::log(42.0));
  }
  GbtConfig c;
  c.rounds = 5;
  const auto m = train_regression(d, nullptr, c);
  CHECK(m.history.train_loss.front() == 0.0);
  CHECK(m.predict_value(std::vector<double>{3.5}, "test") == std::log(42.0));
  CHECK(m.predict_value(std::vector<double>{-100}, "test") == std::log(42.0));
}

TEST_CASE("separable binary feature reaches near-zero loss in 20 rounds") {
  GbtConfig c;
  c.rounds = 20;
  c.learning_rate = 0.3;
  c.l2_reg = 0;
  const auto m = train_regression(separable(100), nullptr, c);
  CHECK(m.history.train_loss.back() < 1e-6);
}

TEST_CASE("training loss is non-increasing") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    GbtConfig c;
    c.rounds = 30;
    const auto m = train_regression(random_dataset(s, 300, 4), nullptr, c);
    for (std::size_t i = 1; i < m.history.train_loss.size(); ++i) {
      CHECK(m.history.train_loss[i] <= m.history.train_loss[i - 1]);
    }
  }
}

TEST_CASE("early stopping on a flat validation loss") {
  // Stumps fit this additive grid exactly in two rounds.
  Dataset d{FeatureMatrix(2, "test"), {}};
  for (int rep = 0; rep < 10; ++rep) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        d.features.add_row(std::vector<double>{static_cast<double>(a), static_cast<double>(b)});
        d.targets.push_back(2.0 * a + b);
      }
    }
  }
  GbtConfig c;
  c.max_depth = 1;
  c.learning_rate = 1;
  c.l2_reg = 0;
  c.rounds = 100;
  const auto m = train_regression(d, &d, c);
  CHECK(m.history.best_round == 1);
  CHECK(m.history.rounds_trained == 12);
  CHECK(m.trees.size() == 2);
  CHECK(m.history.valid_loss.size() == 12);
}

TEST_CASE("classifier") {
  GbtConfig c;
  c.rounds = 20;
  auto d = separable(60);
  const auto m = train_classifier(d, nullptr, 2, c);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < d.features.rows; ++r) {
    const auto p = m.predict_class(d.features.row(r), "test");
    correct += p.label == static_cast<int>(d.targets[r]) ? 1 : 0;
    CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(correct == d.features.rows);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 50);
  for (int i = 0; i < 100; ++i) {
    const auto p = m.predict_class(std::vector<double>{n(rng), n(rng)}, "test");
    CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }

  auto one_class = d;
  std::fill(one_class.targets.begin(), one_class.targets.end(), 0.0);
  CHECK_THROWS_WITH(train_classifier(one_class, nullptr, 2, c), doctest::Contains("class 1"));
  auto out_of_range = d;
  out_of_range.targets[0] = 5;
  CHECK_THROWS(train_classifier(out_of_range, nullptr, 2, c));

  const auto loss = m.history.train_loss;
  for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] <= loss[i - 1]);
}

TEST_CASE("input checks") {
  GbtConfig c;
  Dataset empty{FeatureMatrix(2, "test"), {}};
  CHECK_THROWS(train_regression(empty, nullptr, c));
  auto bad = random_dataset(1, 10, 2);
  bad.features.values[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(train_regression(bad, nullptr, c));
  c.rounds = 3;
  const auto m = train_regression(random_dataset(1, 10, 2), nullptr, c);
  CHECK_THROWS_WITH(m.predict_value(std::vector<double>{0, 0}, "other"), doctest::Contains("layout mismatch"));
  CHECK_THROWS(m.predict_value(std::vector<double>{0}, "test"));
  c.learning_rate = 0;
  CHECK_THROWS(c.check());
}

TEST_CASE("predictions are invariant to rescaling a feature") {
  GbtConfig c;
  c.rounds = 25;
  const auto a = train_regression(random_dataset(4, 200, 3), nullptr, c);
  const auto b = train_regression(random_dataset(4, 200, 3, 2.0), nullptr, c);
  const auto probe = random_dataset(99, 100, 3);
  for (std::size_t r = 0; r < probe.features.rows; ++r) {
    std::vector<double> x(probe.features.row(r).begin(), probe.features.row(r).end());
    const double pa = a.predict_value(x, "test");
    x[0] *= 2;
    CHECK(b.predict_value(x, "test") == doctest::Approx(pa).epsilon(1e-12));
  }
}

TEST_CASE("model round trip and determinism") {
  GbtConfig c;
  c.rounds = 20;
  const auto d = random_dataset(5, 300, 4);
  const auto m = train_regression(d, nullptr, c);
  const auto again = train_regression(d, nullptr, c);
  const std::string text = m.to_json().dump();
  CHECK(again.to_json().dump() == text);
  const auto back = GbtModel::from_json(Json::parse(text));
  CHECK(back.to_json().dump() == text);
  const auto probe = random_dataset(6, 1000, 4);
  for (std::size_t r = 0; r < probe.features.rows; ++r) {
    CHECK(back.predict_value(probe.features.row(r), "test") == m.predict_value(probe.features.row(r), "test"));
  }
}

TEST_CASE("parallel split search matches the serial reference") {
  const auto d = random_dataset(7, 2000, 6);
  ColumnIndex index(d.features);
  std::mt19937_64 rng(8);
  std::vector<int> node_of_row(d.features.rows);
  std::vector<double> grad(d.features.rows), hess(d.features.rows, 1.0);
  std::vector<GradStats> totals(3);
  for (std::size_t r = 0; r < d.features.rows; ++r) {
    const int node = static_cast<int>(rng() % 4) - 1;  // -1 marks a closed leaf
    node_of_row[r] = node;
    grad[r] = std::normal_distribution<double>()(rng);
    if (node >= 0) {
      totals[static_cast<std::size_t>(node)].grad += grad[r];
      totals[static_cast<std::size_t>(node)].hess += 1.0;
    }
  }
  GbtConfig c;
  const auto a = find_level_splits(index, node_of_row, grad, hess, totals, c);
  const auto b = serial::find_level_splits(index, node_of_row, grad, hess, totals, c);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].feature == b[i].feature);
    CHECK(a[i].threshold == b[i].threshold);
    CHECK(a[i].gain == b[i].gain);
  }
}
