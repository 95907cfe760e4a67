#include "planperf/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace planperf::gbt {

void GbtConfig::check() const {
  if (rounds < 1) throw std::invalid_argument("gbt rounds must be >= 1");
  if (!(learning_rate > 0 && learning_rate <= 1)) throw std::invalid_argument("gbt learning_rate must be in (0, 1]");
  if (max_depth < 0) throw std::invalid_argument("gbt max_depth must be >= 0");
  if (!(l2_reg >= 0)) throw std::invalid_argument("gbt l2_reg must be >= 0");
  if (!(min_child_weight >= 0)) throw std::invalid_argument("gbt min_child_weight must be >= 0");
  if (early_stopping_rounds < 1) throw std::invalid_argument("gbt early_stopping_rounds must be >= 1");
}

Json GbtConfig::to_json() const {
  return Json{{"max_depth", max_depth},
              {"rounds", rounds},
              {"learning_rate", learning_rate},
              {"l2_reg", l2_reg},
              {"min_child_weight", min_child_weight},
              {"early_stopping_rounds", early_stopping_rounds},
              {"seed", seed}};
}

GbtConfig GbtConfig::from_json(const Json& j) {
  GbtConfig c;
  c.max_depth = j.value("max_depth", c.max_depth);
  c.rounds = j.value("rounds", c.rounds);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2_reg = j.value("l2_reg", c.l2_reg);
  c.min_child_weight = j.value("min_child_weight", c.min_child_weight);
  c.early_stopping_rounds = j.value("early_stopping_rounds", c.early_stopping_rounds);
  c.seed = j.value("seed", c.seed);
  return c;
}

void FeatureMatrix::add_row(std::span<const double> row) {
  if (row.size() != cols) throw std::invalid_argument("feature row width does not match matrix");
  values.insert(values.end(), row.begin(), row.end());
  ++rows;
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

ColumnIndex::ColumnIndex(const FeatureMatrix& data) : data_(&data), order_(data.cols) {
  for (std::size_t f = 0; f < data.cols; ++f) {
    auto& order = order_[f];
    order.resize(data.rows);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return data.at(a, f) < data.at(b, f); });
  }
}

namespace {

double split_threshold(double lo, double hi) {
  const double t = lo + (hi - lo) / 2;
  return t <= lo ? hi : t;
}

double score(double g, double h, double lambda) { return g * g / (h + lambda); }

// Best split of every open node along one feature.
void scan_feature(const ColumnIndex& index, std::size_t feature, std::span<const int> node_of_row,
                  std::span<const double> grad, std::span<const double> hess, std::span<const GradStats> totals,
                  const GbtConfig& config, std::vector<SplitCandidate>& best) {
  const std::size_t n_nodes = totals.size();
  std::vector<double> gl(n_nodes, 0.0), hl(n_nodes, 0.0), last(n_nodes, 0.0);
  std::vector<char> seen(n_nodes, 0);
  const auto& data = index.data();
  const double lambda = config.l2_reg;

  for (std::uint32_t r : index.sorted(feature)) {
    const int k = node_of_row[r];
    if (k < 0) continue;
    const auto ki = static_cast<std::size_t>(k);
    const double v = data.at(r, feature);
    if (seen[ki] && v > last[ki]) {
      const double g = totals[ki].grad, h = totals[ki].hess;
      const double gr = g - gl[ki], hr = h - hl[ki];
      if (hl[ki] >= config.min_child_weight && hr >= config.min_child_weight) {
        const double gain =
            0.5 * (score(gl[ki], hl[ki], lambda) + score(gr, hr, lambda) - score(g, h, lambda));
        if (gain > best[ki].gain) {
          best[ki] = {gain, static_cast<int>(feature), split_threshold(last[ki], v)};
        }
      }
    }
    gl[ki] += grad[r];
    hl[ki] += hess[r];
    last[ki] = v;
    seen[ki] = 1;
  }
}

std::vector<SplitCandidate> reduce_features(const std::vector<std::vector<SplitCandidate>>& per_feature,
                                            std::size_t n_nodes) {
  std::vector<SplitCandidate> best(n_nodes);
  for (const auto& cands : per_feature) {
    for (std::size_t k = 0; k < n_nodes; ++k) {
      if (cands[k].valid() && cands[k].gain > best[k].gain) best[k] = cands[k];
    }
  }
  return best;
}

void check_finite(const FeatureMatrix& m) {
  for (double v : m.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
  }
}

}  // namespace

std::vector<SplitCandidate> find_level_splits(const ColumnIndex& index, std::span<const int> node_of_row,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const GradStats> node_totals, const GbtConfig& config) {
  const std::size_t n_features = index.data().cols;
  std::vector<std::vector<SplitCandidate>> per_feature(n_features,
                                                       std::vector<SplitCandidate>(node_totals.size()));
  const auto nf = static_cast<std::int64_t>(n_features);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t f = 0; f < nf; ++f) {
    scan_feature(index, static_cast<std::size_t>(f), node_of_row, grad, hess, node_totals, config,
                 per_feature[static_cast<std::size_t>(f)]);
  }
  return reduce_features(per_feature, node_totals.size());
}

namespace serial {
std::vector<SplitCandidate> find_level_splits(const ColumnIndex& index, std::span<const int> node_of_row,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const GradStats> node_totals, const GbtConfig& config) {
  std::vector<SplitCandidate> best(node_totals.size());
  for (std::size_t f = 0; f < index.data().cols; ++f) {
    std::vector<SplitCandidate> cands(node_totals.size());
    scan_feature(index, f, node_of_row, grad, hess, node_totals, config, cands);
    for (std::size_t k = 0; k < best.size(); ++k) {
      if (cands[k].valid() && cands[k].gain > best[k].gain) best[k] = cands[k];
    }
  }
  return best;
}
}  // namespace serial

RegressionTree grow_tree(const ColumnIndex& index, std::span<const double> grad, std::span<const double> hess,
                         const GbtConfig& config) {
  const auto& data = index.data();
  const std::size_t n = data.rows;
  RegressionTree tree;
  tree.nodes.emplace_back();

  std::vector<int> node_of_row(n, 0);
  std::vector<int> open_tree_ids{0};

  auto totals_for = [&](std::size_t n_open) {
    std::vector<GradStats> totals(n_open);
    for (std::size_t r = 0; r < n; ++r) {
      if (node_of_row[r] < 0) continue;
      auto& t = totals[static_cast<std::size_t>(node_of_row[r])];
      t.grad += grad[r];
      t.hess += hess[r];
    }
    return totals;
  };
  auto leaf_value = [&](const GradStats& s) { return -config.learning_rate * s.grad / (s.hess + config.l2_reg); };

  std::vector<GradStats> totals = totals_for(1);
  for (int depth = 0; depth < config.max_depth && !open_tree_ids.empty(); ++depth) {
    const auto splits = find_level_splits(index, node_of_row, grad, hess, totals, config);
    std::vector<int> next_open;
    std::vector<int> left_child(open_tree_ids.size(), -1);
    for (std::size_t k = 0; k < open_tree_ids.size(); ++k) {
      const auto tid = static_cast<std::size_t>(open_tree_ids[k]);
      if (!splits[k].valid()) {
        tree.nodes[tid].value = leaf_value(totals[k]);
        continue;
      }
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[tid].feature = splits[k].feature;
      tree.nodes[tid].threshold = splits[k].threshold;
      tree.nodes[tid].left = left;
      tree.nodes[tid].right = left + 1;
      left_child[k] = static_cast<int>(next_open.size());
      next_open.push_back(left);
      next_open.push_back(left + 1);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const int k = node_of_row[r];
      if (k < 0) continue;
      const auto& s = splits[static_cast<std::size_t>(k)];
      if (!s.valid()) {
        node_of_row[r] = -1;
        continue;
      }
      const bool go_left = data.at(r, static_cast<std::size_t>(s.feature)) < s.threshold;
      node_of_row[r] = left_child[static_cast<std::size_t>(k)] + (go_left ? 0 : 1);
    }
    open_tree_ids = std::move(next_open);
    totals = totals_for(open_tree_ids.size());
  }
  for (std::size_t k = 0; k < open_tree_ids.size(); ++k) {
    tree.nodes[static_cast<std::size_t>(open_tree_ids[k])].value = leaf_value(totals[k]);
  }
  return tree;
}

namespace {

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

double mse(std::span<const double> pred, std::span<const double> target) {
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double cross_entropy(const std::vector<double>& logits, std::span<const double> target, int k) {
  const auto n = target.size();
  const auto kk = static_cast<std::size_t>(k);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = softmax(std::span<const double>(logits.data() + i * kk, kk));
    s -= std::log(std::max(p[static_cast<std::size_t>(target[i])], 1e-300));
  }
  return s / static_cast<double>(n);
}

void check_dataset(const Dataset& d, const char* what) {
  if (d.features.rows == 0) throw std::invalid_argument(std::string(what) + " set is empty");
  if (d.targets.size() != d.features.rows) throw std::invalid_argument(std::string(what) + " targets/rows mismatch");
  check_finite(d.features);
}

// Shared boosting loop. `outputs` is 1 for regression, K for classification.
GbtModel boost(const Dataset& train, const Dataset* valid, GbtModel model, const GbtConfig& config) {
  const std::size_t n = train.features.rows;
  const auto k = static_cast<std::size_t>(model.task == Task::Classification ? model.n_classes : 1);
  const bool has_valid = valid != nullptr && valid->features.rows > 0;
  const std::size_t nv = has_valid ? valid->features.rows : 0;

  std::vector<double> pred(n * k), vpred(nv * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) pred[i * k + c] = model.base_score[c];
  }
  for (std::size_t i = 0; i < nv; ++i) {
    for (std::size_t c = 0; c < k; ++c) vpred[i * k + c] = model.base_score[c];
  }

  auto loss_of = [&](const std::vector<double>& p, std::span<const double> target) {
    return model.task == Task::Regression ? mse(p, target) : cross_entropy(p, target, model.n_classes);
  };

  const ColumnIndex index(train.features);
  std::vector<double> grad(n), hess(n);
  double best_valid = std::numeric_limits<double>::infinity();

  for (int round = 0; round < config.rounds; ++round) {
    std::vector<RegressionTree> round_trees;
    std::vector<std::vector<double>> probs;
    if (model.task == Task::Classification) {
      probs.reserve(n);
      for (std::size_t i = 0; i < n; ++i) probs.push_back(softmax(std::span<const double>(pred.data() + i * k, k)));
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        if (model.task == Task::Regression) {
          grad[i] = pred[i] - train.targets[i];
          hess[i] = 1.0;
        } else {
          const double p = probs[i][c];
          grad[i] = p - (static_cast<std::size_t>(train.targets[i]) == c ? 1.0 : 0.0);
          hess[i] = std::max(p * (1.0 - p), 1e-16);
        }
      }
      round_trees.push_back(grow_tree(index, grad, hess, config));
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) pred[i * k + c] += round_trees[c].predict(train.features.row(i));
      for (std::size_t i = 0; i < nv; ++i) vpred[i * k + c] += round_trees[c].predict(valid->features.row(i));
    }
    model.trees.push_back(std::move(round_trees));
    model.history.train_loss.push_back(loss_of(pred, train.targets));
    model.history.rounds_trained = round + 1;

    if (!has_valid) {
      model.history.best_round = round;
      continue;
    }
    const double v = loss_of(vpred, valid->targets);
    model.history.valid_loss.push_back(v);
    if (v < best_valid) {
      best_valid = v;
      model.history.best_round = round;
    } else if (round - model.history.best_round >= config.early_stopping_rounds) {
      break;
    }
  }
  model.trees.resize(static_cast<std::size_t>(model.history.best_round + 1));
  return model;
}

}  // namespace

GbtModel train_regression(const Dataset& train, const Dataset* valid, const GbtConfig& config) {
  config.check();
  check_dataset(train, "training");
  if (valid && valid->features.rows > 0) check_dataset(*valid, "validation");
  GbtModel model;
  model.task = Task::Regression;
  model.n_features = train.features.cols;
  model.feature_layout = train.features.layout_id;
  model.config = config;
  // Offset form keeps a constant label exact.
  const double first = train.targets.front();
  double offset = 0;
  for (double y : train.targets) offset += y - first;
  model.base_score = {first + offset / static_cast<double>(train.targets.size())};
  return boost(train, valid, std::move(model), config);
}

GbtModel train_classifier(const Dataset& train, const Dataset* valid, int n_classes, const GbtConfig& config) {
  config.check();
  check_dataset(train, "training");
  if (valid && valid->features.rows > 0) check_dataset(*valid, "validation");
  if (n_classes < 2) throw std::invalid_argument("classification needs at least 2 classes");
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  auto check_class = [&](double t) {
    if (t < 0 || t >= n_classes || std::trunc(t) != t) {
      throw std::invalid_argument("class label out of range: " + std::to_string(t));
    }
  };
  for (double t : train.targets) {
    check_class(t);
    ++counts[static_cast<std::size_t>(t)];
  }
  if (valid) {
    for (double t : valid->targets) check_class(t);
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw std::invalid_argument("class " + std::to_string(c) + " is absent from training data");
  }
  GbtModel model;
  model.task = Task::Classification;
  model.n_classes = n_classes;
  model.n_features = train.features.cols;
  model.feature_layout = train.features.layout_id;
  model.config = config;
  for (std::size_t c : counts) {
    model.base_score.push_back(std::log(static_cast<double>(c) / static_cast<double>(train.targets.size())));
  }
  return boost(train, valid, std::move(model), config);
}

void GbtModel::check_input(std::span<const double> features, std::string_view layout_id) const {
  if (layout_id != feature_layout) {
    throw std::invalid_argument("feature layout mismatch: model " + feature_layout + ", input " + std::string(layout_id));
  }
  if (features.size() != n_features) throw std::invalid_argument("feature vector width mismatch");
}

double GbtModel::predict_value(std::span<const double> features, std::string_view layout_id) const {
  check_input(features, layout_id);
  if (task != Task::Regression) throw std::logic_error("predict_value on a classification model");
  double v = base_score[0];
  for (const auto& round : trees) v += round[0].predict(features);
  return v;
}

ClassPrediction GbtModel::predict_class(std::span<const double> features, std::string_view layout_id) const {
  check_input(features, layout_id);
  if (task != Task::Classification) throw std::logic_error("predict_class on a regression model");
  std::vector<double> logits = base_score;
  for (const auto& round : trees) {
    for (std::size_t c = 0; c < round.size(); ++c) logits[c] += round[c].predict(features);
  }
  ClassPrediction out;
  out.probabilities = softmax(logits);
  out.label = static_cast<int>(std::max_element(out.probabilities.begin(), out.probabilities.end()) -
                               out.probabilities.begin());
  return out;
}

Json GbtModel::to_json() const {
  Json rounds = Json::array();
  for (const auto& round : trees) {
    Json per_class = Json::array();
    for (const auto& tree : round) {
      Json nodes = Json::array();
      for (const auto& n : tree.nodes) nodes.push_back(Json::array({n.feature, n.threshold, n.left, n.right, n.value}));
      per_class.push_back(std::move(nodes));
    }
    rounds.push_back(std::move(per_class));
  }
  Json j = Json::object();
  j["format"] = "planperf.gbt";
  j["format_version"] = kFormatVersion;
  j["task"] = task == Task::Regression ? "regression" : "classification";
  j["n_classes"] = n_classes;
  j["n_features"] = n_features;
  j["feature_layout"] = feature_layout;
  j["base_score"] = base_score;
  j["config"] = config.to_json();
  j["history"] = Json{{"train_loss", history.train_loss},
                      {"valid_loss", history.valid_loss},
                      {"best_round", history.best_round},
                      {"rounds_trained", history.rounds_trained}};
  j["trees"] = std::move(rounds);
  return j;
}

GbtModel GbtModel::from_json(const Json& j) {
  if (j.value("format", "") != "planperf.gbt") throw std::invalid_argument("not a gbt model document");
  if (j.at("format_version").get<int>() != kFormatVersion) throw std::invalid_argument("unsupported gbt format_version");
  GbtModel m;
  m.task = j.at("task").get<std::string>() == "regression" ? Task::Regression : Task::Classification;
  m.n_classes = j.at("n_classes").get<int>();
  m.n_features = j.at("n_features").get<std::size_t>();
  m.feature_layout = j.at("feature_layout").get<std::string>();
  m.base_score = j.at("base_score").get<std::vector<double>>();
  m.config = GbtConfig::from_json(j.at("config"));
  const auto& h = j.at("history");
  m.history.train_loss = h.at("train_loss").get<std::vector<double>>();
  m.history.valid_loss = h.at("valid_loss").get<std::vector<double>>();
  m.history.best_round = h.at("best_round").get<int>();
  m.history.rounds_trained = h.at("rounds_trained").get<int>();
  for (const auto& round : j.at("trees")) {
    std::vector<RegressionTree> per_class;
    for (const auto& nodes : round) {
      RegressionTree tree;
      for (const auto& n : nodes) {
        tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                              n.at(4).get<double>()});
      }
      per_class.push_back(std::move(tree));
    }
    m.trees.push_back(std::move(per_class));
  }
  return m;
}

}  // namespace planperf::gbt
