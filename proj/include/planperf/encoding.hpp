#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "planperf/plan.hpp"

namespace planperf {

inline constexpr double kStatEpsilon = 1e-9;

// Log-space bounds for min-max log normalization.
struct LogMinMax {
  double log_min = 0;
  double log_max = 1;
};

// A strategy slot contributes one indicator: 1 when the node's flag for the
// slot equals the first flag of the vocabulary ("partitioned", "partial").
struct StrategySlot {
  std::string name;
  std::vector<std::string> flags;
};

std::vector<StrategySlot> default_strategy_slots();

struct FitOptions {
  std::vector<std::string> operator_kinds;  // registered first, in order
  std::vector<std::string> datatypes;       // registered first, in order
  std::vector<StrategySlot> strategy_slots = default_strategy_slots();
};

// Dictionaries and normalizers fitted on training plans. Frozen after fit.
struct EncodingSpace {
  static constexpr int kFormatVersion = 1;
  static constexpr const char* kConcatOrder = "t,l,tn,s,is";

  OperatorRegistry operators;
  std::vector<std::string> datatypes;
  std::vector<std::string> tables;  // tables[code - 1]; code 0 is UNK
  std::vector<StrategySlot> strategy_slots;
  LogMinMax input_rows;
  LogMinMax input_bytes;
  // Operator-level metric normalizers (multi-task targets); counts floored at 1.
  std::optional<LogMinMax> out_rows;
  std::optional<LogMinMax> out_bytes;

  int table_code(const std::string& table) const;
  std::optional<int> datatype_index(const std::string& type) const;
  std::size_t node_width() const;
  std::size_t flat_width() const { return operators.size() + 4; }
  // Content hash of the serialized space, cached by rebuild_index().
  const std::string& version() const { return version_; }

  Json to_json() const;
  static EncodingSpace from_json(const Json& j);

  // Call after mutating any public field.
  void rebuild_index();

 private:
  std::string version_;
  std::unordered_map<std::string, int> table_index_;
  std::unordered_map<std::string, int> datatype_index_;
};

// Throws std::invalid_argument when no leaf carries input_stats.
EncodingSpace fit_space(const std::vector<QueryRecord>& train, const FitOptions& options = {});

// (log x - log min) / (log max - log min), x floored at kStatEpsilon, result
// clamped into [0, 1].
double normalize_stat(double x, const LogMinMax& normalizer);

struct NodeEncoding {
  std::vector<double> e_t;
  std::vector<double> e_l;
  int e_tn = 0;
  std::vector<double> e_s;
  std::array<double, 2> e_is{0, 0};
  std::vector<double> concat;
};

// Throws std::invalid_argument for an operator kind or data type the space
// has not seen.
NodeEncoding encode_node(const PlanNode& node, const EncodingSpace& space);

struct StructuralOptions {
  int max_height = 16;
  int max_dist = 12;
  std::size_t max_nodes = 256;
};

// Index 0 is the super node; real node i (preorder) sits at index i + 1.
struct PlanEncoding {
  std::vector<NodeEncoding> nodes;
  std::vector<int> parent;  // -1 for the root
  std::vector<int> height;  // depth from root, clamped
  std::vector<int> dist;    // (N+1) x (N+1) distance codes
  std::vector<std::uint8_t> attend_mask;  // (N+1) x (N+1)
  int max_height = 0;
  int max_dist = 0;
  std::string space_version;

  std::size_t size() const { return nodes.size(); }
  std::size_t dim() const { return nodes.size() + 1; }
  int super_code() const { return max_dist + 1; }
  int dist_at(std::size_t i, std::size_t j) const { return dist[i * dim() + j]; }
  bool attends(std::size_t i, std::size_t j) const { return attend_mask[i * dim() + j] != 0; }
};

// Binarizes `plan` first, so node order is the binarized preorder.
PlanEncoding encode_plan_structural(const PlanNode& plan, const EncodingSpace& space,
                                    const StructuralOptions& options = {});

struct FlatFeatures {
  std::vector<double> op_counts;
  double total_rows = 0;
  double avg_rows = 0;
  double total_bytes = 0;
  double avg_bytes = 0;
  bool missing_stats = false;

  std::vector<double> to_vector() const;
};

// Operator counts on the plan as given (n-ary form) plus totals and averages
// of leaf input statistics. Values are raw.
FlatFeatures encode_plan_flat(const PlanNode& plan, const EncodingSpace& space);

// Identifies the flat feature layout a GBT model was trained against.
std::string flat_layout_id(const EncodingSpace& space);

struct LabelNormalizer {
  enum class Kind { MinMaxLog, Log };
  Kind kind = Kind::Log;
  double log_min = 0;
  double log_max = 1;
  double epsilon = kStatEpsilon;

  static LabelNormalizer log_normalizer();
  static LabelNormalizer fit_minmaxlog(std::span<const double> labels);

  // Throws std::invalid_argument for y <= 0.
  double normalize(double y) const;
  double denormalize(double v) const;

  Json to_json() const;
  static LabelNormalizer from_json(const Json& j);
};

// Min-max log normalization of an operator metric, unclamped; values are
// floored at 1 before the log.
double normalize_metric(double value, const LogMinMax& normalizer);

// Canonical byte serialization of the full encoding: equal iff encodings are
// identical. Sensitive to child order.
std::string encoded_form_key(const PlanEncoding& encoding);
std::string flat_form_key(const FlatFeatures& features);

}  // namespace planperf
