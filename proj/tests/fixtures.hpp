#pragma once

#include <string>
#include <vector>

#include "planperf/encoding.hpp"
#include "planperf/plan.hpp"
#include "planperf/synth.hpp"

namespace fixtures {

using namespace planperf;

inline PlanNode scan(const std::string& table, std::vector<std::string> layout, double rows, double bytes) {
  PlanNode n;
  n.kind = "Scan";
  n.table = table;
  n.layout = std::move(layout);
  n.input_stats = InputStats{rows, bytes};
  return n;
}

inline PlanNode node(const std::string& kind, std::vector<PlanNode> children, std::vector<std::string> layout = {}) {
  PlanNode n;
  n.kind = kind;
  n.layout = layout.empty() && !children.empty() ? children.front().layout : std::move(layout);
  n.children = std::move(children);
  return n;
}

inline QueryRecord record(PlanNode plan, const std::string& id, double latency = 10, double cpu = 20) {
  renumber_preorder(plan);
  QueryRecord r;
  r.query_id = id;
  r.latency_ms = latency;
  r.cpu_ms = cpu;
  r.client = "adhoc";
  for (const PlanNode* n : preorder(plan)) {
    if (n->is_leaf() && n->input_stats) r.scanned_bytes += n->input_stats->bytes;
  }
  r.tables_accessed = leaf_tables(plan);
  r.plan = std::move(plan);
  return r;
}

inline FitOptions synth_options() {
  FitOptions o;
  o.operator_kinds = synth::operator_kinds();
  o.datatypes = synth::datatypes();
  return o;
}

inline std::vector<QueryRecord> synth_records(std::size_t n, std::uint64_t seed, double duplicate_fraction = 0.3) {
  synth::SynthConfig c;
  c.n_queries = n;
  c.seed = seed;
  c.duplicate_fraction = duplicate_fraction;
  return synth::generate(c);
}

}  // namespace fixtures
