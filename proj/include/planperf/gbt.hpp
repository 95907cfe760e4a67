#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "planperf/plan.hpp"

namespace planperf::gbt {

struct GbtConfig {
  int max_depth = 6;
  int rounds = 500;
  double learning_rate = 0.3;
  double l2_reg = 1.0;
  double min_child_weight = 1.0;
  int early_stopping_rounds = 10;
  std::uint64_t seed = 0;

  void check() const;
  Json to_json() const;
  static GbtConfig from_json(const Json& j);
};

// Row-major dense feature matrix tagged with the layout it was encoded with.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::string layout_id;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n_cols, std::string layout) : cols(n_cols), layout_id(std::move(layout)) {}

  void add_row(std::span<const double> row);
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// `x < threshold` goes left. Leaves have feature == -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const;
};

// Per-feature presorted row order, shared by every tree of a training run.
class ColumnIndex {
 public:
  explicit ColumnIndex(const FeatureMatrix& data);

  const FeatureMatrix& data() const { return *data_; }
  const std::vector<std::uint32_t>& sorted(std::size_t feature) const { return order_[feature]; }

 private:
  const FeatureMatrix* data_;
  std::vector<std::vector<std::uint32_t>> order_;
};

struct GradStats {
  double grad = 0;
  double hess = 0;
};

struct SplitCandidate {
  double gain = 0;
  int feature = -1;
  double threshold = 0;

  bool valid() const { return feature >= 0; }
};

// Best exact split for every open node of one tree level. `node_of_row[r]`
// is the open node index of row r, or -1 when the row sits in a closed leaf.
// Ties go to the lowest feature, then the lowest threshold.
std::vector<SplitCandidate> find_level_splits(const ColumnIndex& index, std::span<const int> node_of_row,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const GradStats> node_totals, const GbtConfig& config);

namespace serial {
std::vector<SplitCandidate> find_level_splits(const ColumnIndex& index, std::span<const int> node_of_row,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const GradStats> node_totals, const GbtConfig& config);
}

// Grows one tree on gradient statistics; leaf weight is
// -lr * G / (H + l2_reg).
RegressionTree grow_tree(const ColumnIndex& index, std::span<const double> grad, std::span<const double> hess,
                         const GbtConfig& config);

enum class Task { Regression, Classification };

struct History {
  std::vector<double> train_loss;  // after each round
  std::vector<double> valid_loss;  // empty without a validation set
  int best_round = -1;
  int rounds_trained = 0;
};

struct ClassPrediction {
  int label = 0;
  std::vector<double> probabilities;
};

struct GbtModel {
  static constexpr int kFormatVersion = 1;

  Task task = Task::Regression;
  int n_classes = 1;
  std::size_t n_features = 0;
  std::string feature_layout;
  std::vector<double> base_score;                  // one per class (or one)
  std::vector<std::vector<RegressionTree>> trees;  // [round][class]
  GbtConfig config;
  History history;

  // Regression output in the label's normalized (log) space.
  double predict_value(std::span<const double> features, std::string_view layout_id) const;
  ClassPrediction predict_class(std::span<const double> features, std::string_view layout_id) const;

  Json to_json() const;
  static GbtModel from_json(const Json& j);

 private:
  void check_input(std::span<const double> features, std::string_view layout_id) const;
};

struct Dataset {
  FeatureMatrix features;
  std::vector<double> targets;  // log labels or class indices
};

// Squared error on the targets; stops after early_stopping_rounds rounds
// without strict validation improvement and returns the best-round model.
GbtModel train_regression(const Dataset& train, const Dataset* valid, const GbtConfig& config);

// Softmax cross-entropy, one tree per class per round.
GbtModel train_classifier(const Dataset& train, const Dataset* valid, int n_classes, const GbtConfig& config);

}  // namespace planperf::gbt
