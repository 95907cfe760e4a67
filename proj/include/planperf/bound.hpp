#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planperf/encoding.hpp"

namespace planperf::bound {

enum class Target { Latency, Cpu };
enum class KeyKind { Structural, Flat };

struct GroupOptions {
  Target target = Target::Latency;
  KeyKind key = KeyKind::Structural;
  StructuralOptions structural;
};

struct Group {
  std::string key;  // encoded-form bytes
  std::vector<double> labels;
  std::optional<double> chosen;
  double group_quantile = 0;
};

struct Representative {
  double value = 0;
  double group_quantile = 0;
};

// One group per distinct encoded form, in order of first appearance.
std::vector<Group> group_by_encoded_form(std::span<const QueryRecord> records, const EncodingSpace& space,
                                         const GroupOptions& options = {});

// Tries every distinct label as the prediction and keeps the one with the
// lowest nearest-rank q-error quantile; ties go to the smaller label.
Representative select_representative(std::span<const double> labels, double q);

// Fills `chosen` and `group_quantile` for every group.
void choose_representatives(std::vector<Group>& groups, double q);

namespace serial {
void choose_representatives(std::vector<Group>& groups, double q);
}  // namespace serial

struct GroupSummary {
  std::string key_hash;
  std::size_t size = 0;
  double min = 0;
  double max = 0;
  double range = 0;  // max - min
  double ratio = 0;  // max / min
  double chosen = 0;
  double group_quantile = 0;
};

struct CollisionStats {
  std::size_t groups = 0;
  std::size_t singletons = 0;
  std::size_t largest_group = 0;
  std::size_t colliding_records = 0;  // records in groups of size > 1
};

struct BoundReport {
  double q = 0.5;
  std::size_t records = 0;
  double bound = 1;  // approximate lower bound on the pooled q-error quantile
  CollisionStats collisions;
  std::vector<GroupSummary> groups;

  Json to_json() const;
  // key_hash,size,min,max,range,p_i
  std::string to_csv() const;
};

// Pools every label's q-error against its group's representative. Throws on
// empty input or a group without a representative.
BoundReport overall_bound(const std::vector<Group>& groups, double q);

}  // namespace planperf::bound
