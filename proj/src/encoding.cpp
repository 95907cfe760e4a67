#include "planperf/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "planperf/hashing.hpp"

namespace planperf {

std::vector<StrategySlot> default_strategy_slots() {
  return {{"join-distribution", {"partitioned", "broadcast"}}, {"aggregate-phase", {"partial", "final"}}};
}

namespace {

struct MinMaxAccumulator {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  bool seen = false;

  void add(double log_value) {
    lo = std::min(lo, log_value);
    hi = std::max(hi, log_value);
    seen = true;
  }

  // A degenerate range is widened by one log unit so normalization stays defined.
  LogMinMax finish() const {
    LogMinMax out{lo, hi};
    if (!(out.log_min < out.log_max)) out.log_max = out.log_min + 1.0;
    return out;
  }
};

Json log_min_max_json(const LogMinMax& n) { return Json{{"log_min", n.log_min}, {"log_max", n.log_max}}; }

LogMinMax log_min_max_from_json(const Json& j) {
  return {j.at("log_min").get<double>(), j.at("log_max").get<double>()};
}

template <typename T>
void append_raw(std::string& out, const T& value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

int EncodingSpace::table_code(const std::string& table) const {
  auto it = table_index_.find(table);
  return it == table_index_.end() ? 0 : it->second;
}

std::optional<int> EncodingSpace::datatype_index(const std::string& type) const {
  auto it = datatype_index_.find(type);
  if (it == datatype_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EncodingSpace::node_width() const {
  return operators.size() + datatypes.size() + 1 + strategy_slots.size() + 2;
}

void EncodingSpace::rebuild_index() {
  table_index_.clear();
  datatype_index_.clear();
  for (std::size_t i = 0; i < tables.size(); ++i) table_index_[tables[i]] = static_cast<int>(i + 1);
  for (std::size_t i = 0; i < datatypes.size(); ++i) datatype_index_[datatypes[i]] = static_cast<int>(i);
  version_ = sha256_hex(to_json().dump()).substr(0, 16);
}

Json EncodingSpace::to_json() const {
  Json slots = Json::array();
  for (const auto& s : strategy_slots) slots.push_back(Json{{"name", s.name}, {"flags", s.flags}});
  Json normalizers = Json::object();
  normalizers["input_rows"] = log_min_max_json(input_rows);
  normalizers["input_bytes"] = log_min_max_json(input_bytes);
  normalizers["out_rows"] = out_rows ? log_min_max_json(*out_rows) : Json(nullptr);
  normalizers["out_bytes"] = out_bytes ? log_min_max_json(*out_bytes) : Json(nullptr);

  Json j = Json::object();
  j["format"] = "planperf.encoding_space";
  j["format_version"] = kFormatVersion;
  j["concat_order"] = kConcatOrder;
  j["operator_kinds"] = operators.names();
  j["datatypes"] = datatypes;
  j["tables"] = tables;
  j["strategy_slots"] = std::move(slots);
  j["normalizers"] = std::move(normalizers);
  return j;
}

EncodingSpace EncodingSpace::from_json(const Json& j) {
  if (j.value("format", "") != "planperf.encoding_space") throw std::invalid_argument("not an encoding space document");
  if (j.at("format_version").get<int>() != kFormatVersion) {
    throw std::invalid_argument("unsupported encoding space format_version");
  }
  if (j.at("concat_order").get<std::string>() != kConcatOrder) {
    throw std::invalid_argument("unsupported concat order");
  }
  EncodingSpace space;
  space.operators = OperatorRegistry(j.at("operator_kinds").get<std::vector<std::string>>());
  space.datatypes = j.at("datatypes").get<std::vector<std::string>>();
  space.tables = j.at("tables").get<std::vector<std::string>>();
  for (const auto& s : j.at("strategy_slots")) {
    space.strategy_slots.push_back({s.at("name").get<std::string>(), s.at("flags").get<std::vector<std::string>>()});
  }
  const auto& n = j.at("normalizers");
  space.input_rows = log_min_max_from_json(n.at("input_rows"));
  space.input_bytes = log_min_max_from_json(n.at("input_bytes"));
  if (!n.at("out_rows").is_null()) space.out_rows = log_min_max_from_json(n.at("out_rows"));
  if (!n.at("out_bytes").is_null()) space.out_bytes = log_min_max_from_json(n.at("out_bytes"));
  space.rebuild_index();
  return space;
}

EncodingSpace fit_space(const std::vector<QueryRecord>& train, const FitOptions& options) {
  if (train.empty()) throw std::invalid_argument("fit_space needs a non-empty training set");
  EncodingSpace space;
  for (const auto& k : options.operator_kinds) space.operators.add(k);
  space.datatypes = options.datatypes;
  space.strategy_slots = options.strategy_slots;
  space.rebuild_index();

  std::unordered_map<std::string, int> seen_tables;
  std::unordered_map<std::string, int> seen_types;
  for (const auto& t : space.datatypes) seen_types.emplace(t, 0);

  MinMaxAccumulator rows, bytes, out_rows, out_bytes;
  for (const auto& rec : train) {
    for (const PlanNode* node : preorder(rec.plan)) {
      space.operators.add(node->kind);
      for (const auto& t : node->layout) {
        if (seen_types.emplace(t, 0).second) space.datatypes.push_back(t);
      }
      if (node->table && seen_tables.emplace(*node->table, 0).second) space.tables.push_back(*node->table);
      if (node->is_leaf() && node->input_stats) {
        rows.add(std::log(std::max(node->input_stats->rows, kStatEpsilon)));
        bytes.add(std::log(std::max(node->input_stats->bytes, kStatEpsilon)));
      }
      if (node->metrics) {
        out_rows.add(std::log(std::max(node->metrics->out_rows, 1.0)));
        out_bytes.add(std::log(std::max(node->metrics->out_bytes, 1.0)));
      }
    }
  }
  if (!rows.seen) throw std::invalid_argument("cannot fit stat normalizers: no leaf carries input_stats");
  space.input_rows = rows.finish();
  space.input_bytes = bytes.finish();
  if (out_rows.seen) {
    space.out_rows = out_rows.finish();
    space.out_bytes = out_bytes.finish();
  }
  space.rebuild_index();
  return space;
}

double normalize_stat(double x, const LogMinMax& n) {
  const double v = (std::log(std::max(x, kStatEpsilon)) - n.log_min) / (n.log_max - n.log_min);
  return std::clamp(v, 0.0, 1.0);
}

double normalize_metric(double value, const LogMinMax& n) {
  return (std::log(std::max(value, 1.0)) - n.log_min) / (n.log_max - n.log_min);
}

NodeEncoding encode_node(const PlanNode& node, const EncodingSpace& space) {
  NodeEncoding enc;
  auto kind = space.operators.find(node.kind);
  if (!kind) throw std::invalid_argument("unknown operator kind: " + node.kind);
  enc.e_t.assign(space.operators.size(), 0.0);
  enc.e_t[static_cast<std::size_t>(*kind)] = 1.0;

  enc.e_l.assign(space.datatypes.size(), 0.0);
  for (const auto& t : node.layout) {
    auto idx = space.datatype_index(t);
    if (!idx) throw std::invalid_argument("unknown data type in layout: " + t);
    enc.e_l[static_cast<std::size_t>(*idx)] += 1.0;
  }

  enc.e_tn = node.table ? space.table_code(*node.table) : 0;

  enc.e_s.assign(space.strategy_slots.size(), 0.0);
  for (std::size_t i = 0; i < space.strategy_slots.size(); ++i) {
    const auto& slot = space.strategy_slots[i];
    auto it = node.strategy.find(slot.name);
    if (it != node.strategy.end() && !slot.flags.empty() && it->second == slot.flags.front()) enc.e_s[i] = 1.0;
  }

  if (node.is_leaf() && node.input_stats) {
    enc.e_is = {normalize_stat(node.input_stats->rows, space.input_rows),
                normalize_stat(node.input_stats->bytes, space.input_bytes)};
  }

  enc.concat.reserve(space.node_width());
  enc.concat.insert(enc.concat.end(), enc.e_t.begin(), enc.e_t.end());
  enc.concat.insert(enc.concat.end(), enc.e_l.begin(), enc.e_l.end());
  enc.concat.push_back(static_cast<double>(enc.e_tn));
  enc.concat.insert(enc.concat.end(), enc.e_s.begin(), enc.e_s.end());
  enc.concat.insert(enc.concat.end(), enc.e_is.begin(), enc.e_is.end());
  return enc;
}

PlanEncoding encode_plan_structural(const PlanNode& plan, const EncodingSpace& space,
                                    const StructuralOptions& options) {
  const PlanNode bin = binarize(plan);
  const auto nodes = preorder(bin);
  const std::size_t n = nodes.size();
  if (n > options.max_nodes) {
    throw std::invalid_argument("plan has " + std::to_string(n) + " nodes, above the limit max_nodes=" +
                                std::to_string(options.max_nodes));
  }

  PlanEncoding enc;
  enc.max_height = options.max_height;
  enc.max_dist = options.max_dist;
  enc.space_version = space.version();
  enc.nodes.reserve(n);
  enc.parent.assign(n, -1);
  std::vector<int> depth(n, 0);
  std::vector<std::size_t> subtree_end(n, 0);  // exclusive preorder end

  for (std::size_t i = 0; i < n; ++i) enc.nodes.push_back(encode_node(*nodes[i], space));
  // Preorder ids equal indices after binarize().
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& c : nodes[i]->children) {
      const auto ci = static_cast<std::size_t>(c.node_id);
      enc.parent[ci] = static_cast<int>(i);
      depth[ci] = depth[i] + 1;
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    subtree_end[i] = i + 1;
    for (const auto& c : nodes[i]->children) {
      subtree_end[i] = std::max(subtree_end[i], subtree_end[static_cast<std::size_t>(c.node_id)]);
    }
  }

  enc.height.resize(n);
  for (std::size_t i = 0; i < n; ++i) enc.height[i] = std::min(depth[i], options.max_height);

  const std::size_t dim = n + 1;
  enc.dist.assign(dim * dim, 0);
  enc.attend_mask.assign(dim * dim, 0);
  for (std::size_t j = 0; j < dim; ++j) {
    enc.attend_mask[j] = 1;
    if (j > 0) {
      enc.dist[j] = enc.super_code();
      enc.dist[j * dim] = enc.super_code();
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) {
      // Lowest common ancestor by walking the deeper node up.
      std::size_t x = a, y = b;
      while (x != y) {
        if (depth[x] >= depth[y]) {
          x = static_cast<std::size_t>(enc.parent[x]);
        } else {
          y = static_cast<std::size_t>(enc.parent[y]);
        }
      }
      const int d = std::min(depth[a] + depth[b] - 2 * depth[x], options.max_dist);
      enc.dist[(a + 1) * dim + (b + 1)] = d;
      enc.dist[(b + 1) * dim + (a + 1)] = d;
    }
    for (std::size_t b = a; b < subtree_end[a]; ++b) enc.attend_mask[(a + 1) * dim + (b + 1)] = 1;
  }
  return enc;
}

std::vector<double> FlatFeatures::to_vector() const {
  std::vector<double> v = op_counts;
  v.push_back(total_rows);
  v.push_back(avg_rows);
  v.push_back(total_bytes);
  v.push_back(avg_bytes);
  return v;
}

FlatFeatures encode_plan_flat(const PlanNode& plan, const EncodingSpace& space) {
  FlatFeatures f;
  f.op_counts.assign(space.operators.size(), 0.0);
  std::size_t scans = 0;
  for (const PlanNode* node : preorder(plan)) {
    auto kind = space.operators.find(node->kind);
    if (!kind) throw std::invalid_argument("unknown operator kind: " + node->kind);
    f.op_counts[static_cast<std::size_t>(*kind)] += 1.0;
    if (!node->is_leaf()) continue;
    ++scans;
    if (node->input_stats) {
      f.total_rows += node->input_stats->rows;
      f.total_bytes += node->input_stats->bytes;
    } else {
      f.missing_stats = true;
    }
  }
  if (scans > 0) {
    f.avg_rows = f.total_rows / static_cast<double>(scans);
    f.avg_bytes = f.total_bytes / static_cast<double>(scans);
  }
  return f;
}

std::string flat_layout_id(const EncodingSpace& space) {
  std::string material = "flat:";
  for (const auto& k : space.operators.names()) material += k + ",";
  material += "|total_rows,avg_rows,total_bytes,avg_bytes";
  return sha256_hex(material).substr(0, 16);
}

LabelNormalizer LabelNormalizer::log_normalizer() { return LabelNormalizer{}; }

LabelNormalizer LabelNormalizer::fit_minmaxlog(std::span<const double> labels) {
  if (labels.empty()) throw std::invalid_argument("cannot fit a label normalizer on no labels");
  MinMaxAccumulator acc;
  for (double y : labels) {
    if (!(y > 0)) throw std::invalid_argument("labels must be > 0");
    acc.add(std::log(y));
  }
  const LogMinMax mm = acc.finish();
  LabelNormalizer n;
  n.kind = Kind::MinMaxLog;
  n.log_min = mm.log_min;
  n.log_max = mm.log_max;
  return n;
}

double LabelNormalizer::normalize(double y) const {
  if (!(y > 0)) throw std::invalid_argument("label must be > 0");
  const double l = std::log(y);
  if (kind == Kind::Log) return l;
  return (l - log_min) / (log_max - log_min);
}

double LabelNormalizer::denormalize(double v) const {
  if (kind == Kind::Log) return std::exp(v);
  return std::exp(v * (log_max - log_min) + log_min);
}

Json LabelNormalizer::to_json() const {
  return Json{{"kind", kind == Kind::Log ? "log" : "minmaxlog"},
              {"log_min", log_min},
              {"log_max", log_max},
              {"epsilon", epsilon}};
}

LabelNormalizer LabelNormalizer::from_json(const Json& j) {
  LabelNormalizer n;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "log") {
    n.kind = Kind::Log;
  } else if (kind == "minmaxlog") {
    n.kind = Kind::MinMaxLog;
  } else {
    throw std::invalid_argument("unknown label normalizer kind: " + kind);
  }
  n.log_min = j.at("log_min").get<double>();
  n.log_max = j.at("log_max").get<double>();
  n.epsilon = j.at("epsilon").get<double>();
  return n;
}

std::string encoded_form_key(const PlanEncoding& enc) {
  std::string key;
  append_raw(key, static_cast<std::uint64_t>(enc.size()));
  append_raw(key, enc.max_height);
  append_raw(key, enc.max_dist);
  for (const auto& node : enc.nodes) {
    append_raw(key, static_cast<std::uint64_t>(node.concat.size()));
    for (double v : node.concat) append_raw(key, v);
  }
  for (int p : enc.parent) append_raw(key, p);
  for (int h : enc.height) append_raw(key, h);
  for (int d : enc.dist) append_raw(key, d);
  key.append(enc.attend_mask.begin(), enc.attend_mask.end());
  return key;
}

std::string flat_form_key(const FlatFeatures& features) {
  std::string key;
  for (double v : features.to_vector()) append_raw(key, v);
  return key;
}

}  // namespace planperf
