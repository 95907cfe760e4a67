#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>

#include "planperf/pipeline.hpp"
#include "planperf/tree_attention.hpp"

using namespace planperf;
using namespace planperf::nn;

namespace {

struct Corpus {
  std::vector<QueryRecord> records;
  EncodingSpace space;
  LabelNormalizer normalizer;
  std::vector<Sample> samples;
};

Corpus corpus(std::size_t n, std::uint64_t seed) {
  Corpus c;
  c.records = fixtures::synth_records(n, seed);
  c.space = fit_space(c.records, fixtures::synth_options());
  std::vector<double> labels;
  for (const auto& r : c.records) labels.push_back(r.latency_ms);
  c.normalizer = LabelNormalizer::fit_minmaxlog(labels);
  c.samples = pipeline::make_samples(c.records, c.space, pipeline::Target::Latency, c.normalizer, nullptr, {});
  return c;
}

ModelConfig tiny(std::uint64_t seed) {
  ModelConfig m;
  m.d_model = 8;
  m.ffn_dim = 8;
  m.seed = seed;
  return m;
}

}  // namespace

TEST_CASE("combine_loss") {
  CHECK(combine_loss(0.2, 0.3, 1.0) == doctest::Approx(0.5));
  CHECK(combine_loss(0.2, 0.3, 0.0) == 0.2);
  CHECK_THROWS_AS(combine_loss(0.2, 0.3, -0.1), std::invalid_argument);

  const auto c = corpus(20, 1);
  const TreeAttentionModel model(tiny(1), c.space);
  Sample masked = c.samples[0];
  std::fill(masked.node_mask.begin(), masked.node_mask.end(), 0);
  const auto parts = model.sample_loss(masked, 1.0, {});
  CHECK(parts.node == 0.0);
  CHECK(parts.total == parts.plan);
  const auto zero = model.sample_loss(c.samples[0], 0.0, {});
  CHECK(zero.total == zero.plan);
}

TEST_CASE("attention respects the tree mask") {
  const auto c = corpus(40, 2);
  const TreeAttentionModel model(tiny(2), c.space);
  for (const auto& s : c.samples) {
    const auto trace = model.forward(s.encoding);
    const std::size_t dim = s.encoding.dim();
    CHECK(trace.final.size() == dim * 8);
    CHECK(trace.node_outs.size() == 2 * s.encoding.size());
    for (const auto& layer : trace.attention) {
      for (const auto& w : layer) {
        REQUIRE(w.size() == dim * dim);
        for (std::size_t i = 0; i < dim; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < dim; ++j) {
            row += w[i * dim + j];
            if (!s.encoding.attends(i, j)) CHECK(w[i * dim + j] < 1e-12);
          }
          CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("single-node plan") {
  std::vector<QueryRecord> records{fixtures::record(fixtures::scan("a", {"Integer"}, 10, 80), "q")};
  const auto space = fit_space(records, fixtures::synth_options());
  const TreeAttentionModel model(tiny(3), space);
  const auto e = encode_plan_structural(records[0].plan, space);
  const auto trace = model.forward(e);
  CHECK(trace.final.size() == 2 * 8);
  CHECK(trace.plan_out.size() == 1);
  CHECK(std::isfinite(trace.plan_out[0]));
}

TEST_CASE("analytic gradients match central differences") {
  const auto c = corpus(30, 4);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TreeAttentionModel model(tiny(seed), c.space);
    const Sample& s = c.samples[seed * 7];
    const double err = gradient_check(model, s, 1.0, 1e-5);
    CHECK(err < 1e-4);
    // Central-difference error shrinks (or stays at round-off) when the step halves.
    CHECK(gradient_check(model, s, 1.0, 5e-6) < 1e-4);
  }
  ModelConfig cls = tiny(9);
  cls.n_classes = 3;
  Sample s = c.samples[1];
  s.class_label = 2;
  CHECK(gradient_check(TreeAttentionModel(cls, c.space), s, 0.5, 1e-5) < 1e-4);
}

TEST_CASE("parallel batch gradient matches the serial reference bitwise") {
  const auto c = corpus(100, 5);
  const TreeAttentionModel model(tiny(5), c.space);
  std::vector<std::size_t> batch{3, 17, 42, 0, 99, 64, 8};
  const auto a = batch_gradient(model, c.samples, batch, 1.0);
  const auto b = nn::serial::batch_gradient(model, c.samples, batch, 1.0);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("early stopping after patience epochs without improvement") {
  const auto c = corpus(60, 6);
  TreeAttentionModel model(tiny(6), c.space);
  TrainConfig t;
  t.learning_rate = 1e-300;  // predictions stay put, so the metric never improves
  t.max_epochs = 50;
  t.patience = 3;
  const auto h = train(model, c.samples, c.samples, t, c.normalizer);
  CHECK(h.epochs.size() == 4);
  CHECK(h.best_epoch == 1);
}

TEST_CASE("memorizes a small training set") {
  const auto c = corpus(50, 7);
  TreeAttentionModel model(tiny(7), c.space);
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.batch_size = 10;
  t.max_epochs = 150;
  t.patience = 150;
  const auto h = train(model, c.samples, c.samples, t, c.normalizer);
  CHECK(h.epochs.back().train_loss < 0.1 * h.epochs.front().train_loss);
  CHECK(validation_p50(model, c.samples, c.normalizer) < 1.5);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto c = corpus(80, 8);
  TrainConfig t;
  t.max_epochs = 3;
  t.seed = 11;
  TreeAttentionModel a(tiny(8), c.space), b(tiny(8), c.space);
  const auto ha = train(a, c.samples, c.samples, t, c.normalizer);
  const auto hb = train(b, c.samples, c.samples, t, c.normalizer);
  CHECK(ha.to_json().dump() == hb.to_json().dump());
  CHECK(a.to_json().dump() == b.to_json().dump());
}

TEST_CASE("checkpoint round trip") {
  const auto c = corpus(60, 9);
  const TreeAttentionModel model(tiny(9), c.space);
  const std::string text = model.to_json().dump();
  const auto back = TreeAttentionModel::from_json(Json::parse(text));
  CHECK(back.to_json().dump() == text);
  for (const auto& s : c.samples) CHECK(back.predict_normalized(s.encoding) == model.predict_normalized(s.encoding));

  Json old = model.to_json();
  old["version"] = TreeAttentionModel::kFormatVersion + 1;
  CHECK_THROWS_WITH(TreeAttentionModel::from_json(old), doctest::Contains("version"));
}

TEST_CASE("config validation") {
  TrainConfig t;
  t.lr_decay = 0;
  CHECK_THROWS(t.check());
  t.lr_decay = 1.5;
  CHECK_THROWS(t.check());
  t = TrainConfig{};
  t.patience = 0;
  CHECK_THROWS(t.check());
  t = TrainConfig{};
  t.batch_size = 0;
  CHECK_THROWS(t.check());
  t = TrainConfig{};
  t.lambda = -1;
  CHECK_THROWS(t.check());
  ModelConfig m;
  m.d_model = 15;
  CHECK_THROWS(m.check());
  const auto back = TrainConfig::from_json(TrainConfig{}.to_json());
  CHECK(back.to_json() == TrainConfig{}.to_json());
}
