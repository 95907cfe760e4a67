#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "planperf/encoding.hpp"
#include "planperf/tensor.hpp"

namespace planperf::nn {

struct ModelConfig {
  int d_model = 16;
  int n_heads = 2;
  int n_layers = 2;
  int ffn_dim = 32;
  int max_height = 16;
  int max_dist = 12;
  int n_classes = 0;  // 0 for regression
  bool node_head = true;
  std::size_t max_nodes = 256;
  std::uint64_t seed = 0;

  void check() const;
  bool regression() const { return n_classes == 0; }
  int plan_outputs() const { return regression() ? 1 : n_classes; }
  Json to_json() const;
  static ModelConfig from_json(const Json& j);
};

// Widths of the raw encoding components the input projections consume.
struct InputWidths {
  std::size_t operators = 0;
  std::size_t datatypes = 0;
  std::size_t table_codes = 0;  // tables + 1 for UNK
  std::size_t strategies = 0;

  static InputWidths of(const EncodingSpace& space);
  bool operator==(const InputWidths&) const = default;
};

struct Sample {
  PlanEncoding encoding;
  double label = 0;      // normalized plan label (regression)
  int class_label = 0;   // classification target
  double raw_label = 0;  // un-normalized, for q-error
  std::vector<double> node_targets;     // N x 2: normalized out_rows, out_bytes
  std::vector<std::uint8_t> node_mask;  // N: 1 when the node has metrics
};

struct ForwardTrace {
  std::vector<double> plan_out;   // 1 value or K logits
  std::vector<double> node_outs;  // N x 2, empty without a node head
  std::vector<double> final;      // (N+1) x d_model trunk output
  std::vector<std::vector<std::vector<double>>> attention;  // [layer][head] (N+1)^2
};

struct LossParts {
  double plan = 0;
  double node = 0;
  double total = 0;
};

// L1 + lambda * L2. Throws std::invalid_argument for lambda < 0.
double combine_loss(double plan_loss, double node_loss, double lambda);

class TreeAttentionModel {
 public:
  static constexpr int kFormatVersion = 1;

  TreeAttentionModel(const ModelConfig& config, const EncodingSpace& space);

  const ModelConfig& config() const { return config_; }
  const std::string& space_version() const { return space_version_; }
  const InputWidths& widths() const { return widths_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  // Parameters before this index belong to the trunk and plan head.
  std::size_t node_head_offset() const { return node_head_offset_; }

  ForwardTrace forward(const PlanEncoding& encoding) const;
  double predict_normalized(const PlanEncoding& encoding) const;
  int predict_class(const PlanEncoding& encoding) const;

  // Loss on one sample; adds d(loss)/d(params) into `grad` when non-empty.
  LossParts sample_loss(const Sample& sample, double lambda, std::span<double> grad) const;

  Json to_json() const;
  static TreeAttentionModel from_json(const Json& j);

 private:
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Graph {
    Tape::Var plan_out;
    Tape::Var node_outs;
    Tape::Var final;
    std::vector<std::vector<Tape::Var>> attention;
  };

  TreeAttentionModel() = default;
  void build();
  void init_parameters();
  void check_input(const PlanEncoding& encoding) const;
  Graph build_graph(Tape& tape, const PlanEncoding& encoding) const;

  ModelConfig config_;
  InputWidths widths_;
  std::string space_version_;
  ParameterSet params_;
  std::vector<std::size_t> part_width_;
  std::size_t w_t_, b_t_, w_l_, b_l_, emb_tn_, w_s_, b_s_, w_is_, b_is_;
  std::size_t super_emb_, height_emb_, tree_bias_;
  std::vector<Layer> layers_;
  std::size_t lnf_g_, lnf_b_, wp1_, bp1_, wp2_, bp2_;
  std::size_t wn1_ = 0, bn1_ = 0, wn2_ = 0, bn2_ = 0;
  std::size_t node_head_offset_ = 0;
};

struct BatchResult {
  double loss = 0;            // mean over the batch
  std::vector<double> grad;   // mean over the batch, ParameterSet layout
};

// Per-sample gradients in parallel, reduced in batch order.
BatchResult batch_gradient(const TreeAttentionModel& model, std::span<const Sample> samples,
                           std::span<const std::size_t> batch, double lambda);

namespace serial {
BatchResult batch_gradient(const TreeAttentionModel& model, std::span<const Sample> samples,
                           std::span<const std::size_t> batch, double lambda);
}  // namespace serial

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  void apply(ParameterSet& params, std::span<const double> grad, double learning_rate);
};

struct TrainConfig {
  double lambda = 1.0;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-epoch multiplier
  int max_epochs = 100;
  int patience = 3;
  std::uint64_t seed = 0;

  void check() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double valid_metric = 0;  // P50 q-error (regression) or accuracy
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  Json to_json() const;
};

// P50 q-error of denormalized predictions against raw labels.
double validation_p50(const TreeAttentionModel& model, std::span<const Sample> samples,
                      const LabelNormalizer& normalizer);
double validation_accuracy(const TreeAttentionModel& model, std::span<const Sample> samples);

// Mini-batch Adam. After each epoch scores the validation set; stops once
// `patience` epochs pass without strict improvement and restores the best
// epoch's parameters. Throws std::runtime_error on a non-finite loss.
TrainHistory train(TreeAttentionModel& model, std::span<const Sample> train_set, std::span<const Sample> valid_set,
                   const TrainConfig& config, const LabelNormalizer& normalizer);

// Attention key biases have an exactly zero gradient (softmax is invariant to
// a per-row shift), so their numeric estimate is pure round-off; the floor
// keeps that from dominating the ratio.
inline constexpr double kGradCheckFloor = 1e-5;

// Max over all parameters of |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor)
// using central differences with step `epsilon`.
double gradient_check(const TreeAttentionModel& model, const Sample& sample, double lambda, double epsilon);

}  // namespace planperf::nn
