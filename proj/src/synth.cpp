#include "planperf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "planperf/hashing.hpp"

namespace planperf::synth {

void SynthConfig::check() const {
  if (n_queries < 1) throw std::invalid_argument("n_queries must be >= 1");
  if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
  if (n_tables < 1) throw std::invalid_argument("n_tables must be >= 1");
  if (n_operator_kinds < 2 || n_operator_kinds > 7) throw std::invalid_argument("n_operator_kinds must be in [2, 7]");
  if (!(latency_sigma >= 0) || !(hidden_noise_sigma >= 0) || !(cpu_latency_extra_noise >= 0)) {
    throw std::invalid_argument("sigma parameters must be >= 0");
  }
  if (!std::isfinite(latency_mu)) throw std::invalid_argument("latency_mu must be finite");
  if (!(duplicate_fraction >= 0 && duplicate_fraction <= 1)) {
    throw std::invalid_argument("duplicate_fraction must be in [0, 1]");
  }
}

Json SynthConfig::to_json() const {
  return Json{{"n_queries", n_queries},
              {"max_depth", max_depth},
              {"n_tables", n_tables},
              {"n_operator_kinds", n_operator_kinds},
              {"latency_mu", latency_mu},
              {"latency_sigma", latency_sigma},
              {"hidden_noise_sigma", hidden_noise_sigma},
              {"cpu_latency_extra_noise", cpu_latency_extra_noise},
              {"duplicate_fraction", duplicate_fraction},
              {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const Json& j) {
  SynthConfig c;
  c.n_queries = j.value("n_queries", c.n_queries);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.n_tables = j.value("n_tables", c.n_tables);
  c.n_operator_kinds = j.value("n_operator_kinds", c.n_operator_kinds);
  c.latency_mu = j.value("latency_mu", c.latency_mu);
  c.latency_sigma = j.value("latency_sigma", c.latency_sigma);
  c.hidden_noise_sigma = j.value("hidden_noise_sigma", c.hidden_noise_sigma);
  c.cpu_latency_extra_noise = j.value("cpu_latency_extra_noise", c.cpu_latency_extra_noise);
  c.duplicate_fraction = j.value("duplicate_fraction", c.duplicate_fraction);
  c.seed = j.value("seed", c.seed);
  c.check();
  return c;
}

const std::vector<std::string>& operator_kinds() {
  static const std::vector<std::string> kinds{"Scan", "Join", "Filter", "Project", "Aggregate", "Exchange", "Output"};
  return kinds;
}

const std::vector<std::string>& datatypes() {
  static const std::vector<std::string> types{"Integer", "Double", "String", "Date", "Map", "Array"};
  return types;
}

namespace {

double type_width(const std::string& type) {
  if (type == "Integer" || type == "Double") return 8;
  if (type == "String") return 24;
  if (type == "Date") return 4;
  if (type == "Map") return 64;
  return 48;
}

double layout_width(const std::vector<std::string>& layout) {
  double w = 0;
  for (const auto& t : layout) w += type_width(t);
  return std::max(w, 1.0);
}

struct Table {
  std::string name;
  double rows = 0;
  std::vector<std::string> layout;
  double selectivity = 1;
};

using Rng = std::mt19937_64;

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
int pick(Rng& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

std::vector<Table> make_tables(const SynthConfig& c) {
  Rng rng(derive_seed(c.seed, "synth.tables"));
  // Commonly scanned types dominate table schemas.
  const std::vector<double> weights{0.35, 0.2, 0.25, 0.1, 0.05, 0.05};
  std::discrete_distribution<int> type_dist(weights.begin(), weights.end());
  std::vector<Table> tables;
  for (int i = 0; i < c.n_tables; ++i) {
    Table t;
    char name[32];
    std::snprintf(name, sizeof name, "t%03d", i);
    t.name = name;
    t.rows = std::round(std::clamp(std::exp(std::log(1e5) + 1.5 * c.latency_sigma * normal(rng)), 10.0, 1e10));
    const int cols = 2 + pick(rng, 5);
    for (int k = 0; k < cols; ++k) t.layout.push_back(datatypes()[static_cast<std::size_t>(type_dist(rng))]);
    t.selectivity = 0.05 + 0.75 * uniform(rng);
    tables.push_back(std::move(t));
  }
  return tables;
}

class Generator {
 public:
  Generator(const SynthConfig& c, std::vector<Table> tables)
      : config_(c), tables_(std::move(tables)), rng_(derive_seed(c.seed, "synth.queries")) {}

  PlanNode plan() {
    PlanNode root = node(kinds_enabled("Output") ? 1 : 0);
    if (kinds_enabled("Output")) {
      PlanNode out;
      out.kind = "Output";
      out.layout = root.layout;
      out.children.push_back(std::move(root));
      root = std::move(out);
    }
    renumber_preorder(root);
    return root;
  }

  Rng& rng() { return rng_; }

 private:
  bool kinds_enabled(const std::string& kind) const {
    const auto& all = operator_kinds();
    const auto pos = std::find(all.begin(), all.end(), kind) - all.begin();
    return pos < config_.n_operator_kinds;
  }

  PlanNode scan() {
    // Squaring skews picks toward low table indices (popular tables).
    const double u = uniform(rng_);
    const auto idx = std::min(tables_.size() - 1, static_cast<std::size_t>(u * u * static_cast<double>(tables_.size())));
    const Table& t = tables_[idx];
    PlanNode n;
    n.kind = "Scan";
    n.table = t.name;
    n.layout = t.layout;
    // Partition pruning reads a power-of-two share of the table.
    const double fraction = std::exp2(-pick(rng_, 8));
    const double rows = std::max(1.0, std::round(t.rows * fraction));
    n.input_stats = InputStats{rows, rows * layout_width(t.layout)};
    return n;
  }

  PlanNode node(int depth) {
    const double leaf_p = depth == 0 ? 0.0 : 0.2 + 0.15 * depth;
    if (depth >= config_.max_depth - 1 || uniform(rng_) < leaf_p) return scan();
    static const std::vector<std::pair<std::string, double>> choices{
        {"Join", 0.35}, {"Filter", 0.2}, {"Project", 0.15}, {"Aggregate", 0.15}, {"Exchange", 0.15}};
    std::vector<double> w;
    for (const auto& [kind, weight] : choices) w.push_back(kinds_enabled(kind) ? weight : 0.0);
    std::discrete_distribution<int> dist(w.begin(), w.end());
    const std::string kind = choices[static_cast<std::size_t>(dist(rng_))].first;
    PlanNode n;
    n.kind = kind;
    if (kind == "Join") {
      n.strategy["join-distribution"] = uniform(rng_) < 0.6 ? "partitioned" : "broadcast";
      n.children.push_back(node(depth + 1));
      n.children.push_back(node(depth + 1));
      n.layout = n.children[0].layout;
      n.layout.insert(n.layout.end(), n.children[1].layout.begin(), n.children[1].layout.end());
      if (n.layout.size() > 8) n.layout.resize(8);
    } else if (kind == "Exchange") {
      const int k = 3 + pick(rng_, 2);
      for (int i = 0; i < k; ++i) n.children.push_back(node(depth + 1));
      n.layout = n.children[0].layout;
    } else {
      n.children.push_back(node(depth + 1));
      const auto& child = n.children[0].layout;
      if (kind == "Filter") {
        n.layout = child;
      } else if (kind == "Project") {
        const std::size_t keep = 1 + static_cast<std::size_t>(pick(rng_, static_cast<int>(child.size())));
        n.layout.assign(child.begin(), child.begin() + static_cast<std::ptrdiff_t>(keep));
      } else {
        n.strategy["aggregate-phase"] = uniform(rng_) < 0.5 ? "partial" : "final";
        n.layout.assign(child.begin(), child.begin() + std::min<std::ptrdiff_t>(2, static_cast<std::ptrdiff_t>(child.size())));
        n.layout.push_back("Double");
      }
    }
    return n;
  }

  const SynthConfig& config_;
  std::vector<Table> tables_;
  Rng rng_;
};

struct CostState {
  double cost = 0;
  int parallel_ops = 0;
};

// Fills metrics bottom-up and returns the node's output rows.
double apply_cost_model(PlanNode& n, double hidden, const std::vector<Table>& tables, CostState& state) {
  std::vector<double> in;
  for (auto& c : n.children) in.push_back(apply_cost_model(c, hidden, tables, state));
  double out = 0;
  if (n.kind == "Scan") {
    const auto t = std::find_if(tables.begin(), tables.end(), [&](const Table& x) { return x.name == *n.table; });
    const double rows = n.input_stats->rows;
    out = std::min(rows, rows * t->selectivity * hidden);
    state.cost += rows + 0.02 * n.input_stats->bytes;
  } else if (n.kind == "Filter") {
    double kept = 0;
    for (const auto& type : n.layout) kept += (type == "Integer" || type == "Date") ? 1 : 0;
    out = in[0] * (0.15 + 0.7 * kept / static_cast<double>(n.layout.size()));
    state.cost += 0.3 * in[0];
  } else if (n.kind == "Project" || n.kind == "Output") {
    out = in[0];
    state.cost += (n.kind == "Project" ? 0.1 : 0.05) * in[0];
  } else if (n.kind == "Join") {
    const bool partitioned = n.strategy.at("join-distribution") == "partitioned";
    out = std::min(in[0] * in[1], std::sqrt(in[0] * in[1]) * (partitioned ? 1.5 : 0.8));
    state.cost += partitioned ? 2.0 * (in[0] + in[1]) + 0.5 * out : in[0] + 4.0 * in[1] + 0.5 * out;
    if (partitioned) ++state.parallel_ops;
  } else if (n.kind == "Aggregate") {
    const bool partial = n.strategy.at("aggregate-phase") == "partial";
    out = partial ? 0.25 * in[0] : std::pow(in[0], 0.6);
    state.cost += (partial ? 1.5 : 0.8) * in[0];
  } else if (n.kind == "Exchange") {
    for (double r : in) out += r;
    state.cost += 0.5 * out;
    ++state.parallel_ops;
  } else {
    throw std::logic_error("unexpected operator kind " + n.kind);
  }
  out = std::max(1.0, std::round(out));
  n.metrics = NodeMetrics{out, out * layout_width(n.layout)};
  return out;
}

}  // namespace

std::vector<QueryRecord> generate(const SynthConfig& config) {
  config.check();
  const std::vector<Table> tables = make_tables(config);
  Generator gen(config, tables);
  Rng& rng = gen.rng();
  static const std::vector<std::string> clients{"etl", "dashboard", "adhoc", "notebook"};

  std::vector<PlanNode> originals;
  std::vector<QueryRecord> out;
  out.reserve(config.n_queries);
  for (std::size_t i = 0; i < config.n_queries; ++i) {
    const bool duplicate = !originals.empty() && uniform(rng) < config.duplicate_fraction;
    PlanNode plan;
    if (duplicate) {
      plan = originals[static_cast<std::size_t>(pick(rng, static_cast<int>(originals.size())))];
    } else {
      plan = gen.plan();
      originals.push_back(plan);
    }
    const double hidden = std::exp(config.hidden_noise_sigma * normal(rng));
    const double extra = std::exp(config.cpu_latency_extra_noise * normal(rng));
    const std::string& client = clients[static_cast<std::size_t>(pick(rng, static_cast<int>(clients.size())))];

    CostState state;
    apply_cost_model(plan, hidden, tables, state);
    QueryRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "q%07zu", i);
    r.query_id = id;
    r.cpu_ms = std::exp(config.latency_mu) * state.cost * 1e-4;
    r.latency_ms = r.cpu_ms / std::exp2(std::min(state.parallel_ops, 4)) * extra;
    r.client = client;
    for (const PlanNode* n : preorder(plan)) {
      if (n->is_leaf()) r.scanned_bytes += n->input_stats->bytes;
    }
    r.tables_accessed = leaf_tables(plan);
    r.plan = std::move(plan);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace planperf::synth
