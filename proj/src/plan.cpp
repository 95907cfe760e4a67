#include "planperf/plan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace planperf {

OperatorRegistry::OperatorRegistry(const std::vector<std::string>& names) {
  for (const auto& n : names) {
    if (find(n)) throw std::invalid_argument("duplicate operator kind: " + n);
    add(n);
  }
}

int OperatorRegistry::add(std::string_view name) {
  if (auto id = find(name)) return *id;
  const int id = static_cast<int>(kinds_.size());
  kinds_.push_back({id, std::string(name)});
  return id;
}

std::optional<int> OperatorRegistry::find(std::string_view name) const {
  for (const auto& k : kinds_) {
    if (k.name == name) return k.id;
  }
  return std::nullopt;
}

std::vector<std::string> OperatorRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(kinds_.size());
  for (const auto& k : kinds_) out.push_back(k.name);
  return out;
}

namespace {

void renumber_from(PlanNode& node, int& next) {
  node.node_id = next++;
  for (auto& c : node.children) renumber_from(c, next);
}

PlanNode binarize_rec(const PlanNode& node) {
  PlanNode out = node;
  out.children.clear();
  std::vector<PlanNode> kids;
  kids.reserve(node.children.size());
  for (const auto& c : node.children) kids.push_back(binarize_rec(c));
  if (kids.size() <= 2) {
    out.children = std::move(kids);
    return out;
  }
  // Build the chain bottom-up: the last two children share the deepest copy.
  PlanNode chain = node;
  chain.children.clear();
  chain.metrics.reset();
  chain.extra = Json::object();
  chain.children.push_back(std::move(kids[kids.size() - 2]));
  chain.children.push_back(std::move(kids.back()));
  for (std::size_t i = kids.size() - 2; i-- > 1;) {
    PlanNode up = node;
    up.children.clear();
    up.metrics.reset();
    up.extra = Json::object();
    up.children.push_back(std::move(kids[i]));
    up.children.push_back(std::move(chain));
    chain = std::move(up);
  }
  out.children.push_back(std::move(kids[0]));
  out.children.push_back(std::move(chain));
  return out;
}

void digest_into(const PlanNode& node, std::string& out) {
  out += std::to_string(node.kind.size());
  out += ':';
  out += node.kind;
  out += '(';
  for (const auto& c : node.children) digest_into(c, out);
  out += ')';
}

void collect_violations(const PlanNode& node, int& expected_id, std::vector<std::string>& out) {
  if (node.node_id != expected_id) {
    out.push_back("node_id " + std::to_string(node.node_id) + " breaks preorder numbering (expected " +
                  std::to_string(expected_id) + ")");
  }
  ++expected_id;
  if (node.kind.empty()) out.push_back("node " + std::to_string(node.node_id) + " has empty kind");
  if (node.input_stats) {
    if (!node.is_leaf()) out.push_back("input_stats on non-leaf");
    if (!(node.input_stats->rows >= 0) || !(node.input_stats->bytes >= 0)) {
      out.push_back("input_stats must be >= 0");
    }
  }
  if (node.metrics && (!(node.metrics->out_rows >= 0) || !(node.metrics->out_bytes >= 0))) {
    out.push_back("metrics must be >= 0");
  }
  for (const auto& c : node.children) collect_violations(c, expected_id, out);
}

}  // namespace

void renumber_preorder(PlanNode& plan) {
  int next = 0;
  renumber_from(plan, next);
}

PlanNode binarize(const PlanNode& plan) {
  PlanNode out = binarize_rec(plan);
  renumber_preorder(out);
  return out;
}

PlanShape shape_digest(const PlanNode& plan) {
  PlanShape shape;
  digest_into(plan, shape.digest);
  return shape;
}

std::size_t count_nodes(const PlanNode& plan) {
  std::size_t n = 1;
  for (const auto& c : plan.children) n += count_nodes(c);
  return n;
}

std::vector<std::string> leaf_tables(const PlanNode& plan) {
  std::vector<std::string> out;
  for (const PlanNode* n : preorder(plan)) {
    if (n->is_leaf() && n->table) out.push_back(*n->table);
  }
  return out;
}

std::vector<const PlanNode*> preorder(const PlanNode& plan) {
  std::vector<const PlanNode*> out;
  std::vector<const PlanNode*> stack{&plan};
  while (!stack.empty()) {
    const PlanNode* n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (auto it = n->children.rbegin(); it != n->children.rend(); ++it) stack.push_back(&*it);
  }
  return out;
}

std::vector<std::string> validate(const QueryRecord& record) {
  std::vector<std::string> out;
  if (record.query_id.empty()) out.push_back("query_id must be non-empty");
  if (!(record.latency_ms > 0)) out.push_back("latency_ms must be > 0");
  if (!(record.cpu_ms > 0)) out.push_back("cpu_ms must be > 0");
  if (!(record.scanned_bytes >= 0)) out.push_back("scanned_bytes must be >= 0");
  int expected = 0;
  collect_violations(record.plan, expected, out);

  double leaf_bytes = 0;
  bool all_present = true;
  for (const PlanNode* n : preorder(record.plan)) {
    if (!n->is_leaf()) continue;
    if (n->input_stats) {
      leaf_bytes += n->input_stats->bytes;
    } else {
      all_present = false;
    }
  }
  if (all_present && std::abs(leaf_bytes - record.scanned_bytes) > 1e-9 * std::max(1.0, leaf_bytes)) {
    out.push_back("scanned_bytes does not match leaf input_stats bytes");
  }
  return out;
}

bool same_tree(const PlanNode& a, const PlanNode& b) {
  auto stats_eq = [](const std::optional<InputStats>& x, const std::optional<InputStats>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || (x->rows == y->rows && x->bytes == y->bytes);
  };
  auto metrics_eq = [](const std::optional<NodeMetrics>& x, const std::optional<NodeMetrics>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || (x->out_rows == y->out_rows && x->out_bytes == y->out_bytes);
  };
  if (a.kind != b.kind || a.layout != b.layout || a.table != b.table || a.strategy != b.strategy ||
      !stats_eq(a.input_stats, b.input_stats) || !metrics_eq(a.metrics, b.metrics) ||
      a.children.size() != b.children.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!same_tree(a.children[i], b.children[i])) return false;
  }
  return true;
}

}  // namespace planperf
