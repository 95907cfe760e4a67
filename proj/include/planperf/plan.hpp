#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace planperf {

using Json = nlohmann::ordered_json;

struct OperatorKind {
  int id = 0;
  std::string name;
};

// Dense id <-> name mapping for operator kinds. Ids are 0..size()-1 in
// insertion order.
class OperatorRegistry {
 public:
  OperatorRegistry() = default;
  explicit OperatorRegistry(const std::vector<std::string>& names);

  // Returns the existing id when `name` is already registered.
  int add(std::string_view name);
  std::optional<int> find(std::string_view name) const;
  const std::string& name(int id) const { return kinds_.at(static_cast<std::size_t>(id)).name; }
  std::size_t size() const { return kinds_.size(); }
  const std::vector<OperatorKind>& kinds() const { return kinds_; }
  std::vector<std::string> names() const;

 private:
  std::vector<OperatorKind> kinds_;
};

struct InputStats {
  double rows = 0;
  double bytes = 0;
};

struct NodeMetrics {
  double out_rows = 0;
  double out_bytes = 0;
};

struct PlanNode {
  int node_id = 0;
  std::string kind;
  std::vector<std::string> layout;
  std::optional<std::string> table;
  std::map<std::string, std::string> strategy;
  std::optional<InputStats> input_stats;
  std::optional<NodeMetrics> metrics;
  std::vector<PlanNode> children;
  // Unknown JSON fields carried through a read/write cycle.
  Json extra = Json::object();

  bool is_leaf() const { return children.empty(); }
};

struct QueryRecord {
  std::string query_id;
  PlanNode plan;
  double latency_ms = 0;
  double cpu_ms = 0;
  std::string client;
  double scanned_bytes = 0;
  std::vector<std::string> tables_accessed;
  bool system_tables_only = false;
  Json extra = Json::object();
};

struct PlanShape {
  std::string digest;

  friend bool operator==(const PlanShape&, const PlanShape&) = default;
};

// Assigns contiguous preorder ids starting at 0.
void renumber_preorder(PlanNode& plan);

// Splits every node with more than two children into a left-deep chain of
// binary copies: X(c1..cn) -> X(c1, X(c2, ... X(c_{n-1}, c_n))). Chain copies
// keep kind, layout and strategy; only the topmost keeps metrics and extras.
PlanNode binarize(const PlanNode& plan);

PlanShape shape_digest(const PlanNode& plan);

std::size_t count_nodes(const PlanNode& plan);

// Table names of leaves with a table, in preorder (duplicates kept).
std::vector<std::string> leaf_tables(const PlanNode& plan);

// Nodes in preorder.
std::vector<const PlanNode*> preorder(const PlanNode& plan);

std::vector<std::string> validate(const QueryRecord& record);

// Structural equality ignoring node_id and extras.
bool same_tree(const PlanNode& a, const PlanNode& b);

}  // namespace planperf
