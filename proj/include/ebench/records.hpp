#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ebench {

enum class MetricKind { BinaryAccuracy, BoundedScore, Unbounded };

std::string metric_kind_name(MetricKind kind);
MetricKind metric_kind_from_name(const std::string& name);

// Range a point estimate of this metric must live in, if bounded.
bool metric_is_bounded(MetricKind kind);

// One per-example evaluation outcome. Scores arrive precomputed; confidence
// and embedding are optional and consumers that need them fail eagerly.
struct EvalRecord {
  std::string example_id;
  std::string model_id;
  std::string task_id;
  std::optional<std::string> group_key;
  double score = 0.0;
  std::optional<double> confidence;
  std::optional<std::vector<double>> embedding;
};

struct Dataset {
  std::vector<EvalRecord> records;
  MetricKind metric_kind = MetricKind::BoundedScore;
  std::optional<std::size_t> embedding_dim;
};

// All records sharing one group label. When produced by split_by_model the
// records additionally share model_id and the subgroup is an estimation unit.
struct SubgroupData {
  std::string group_key;
  std::vector<EvalRecord> records;
};

// Parse newline-delimited JSON records. Keys: example_id, model_id, task_id,
// optional group, score, optional confidence, optional embedding. Unknown
// keys are rejected. Errors carry the 1-based line number.
Dataset ingest_records(std::istream& in, MetricKind kind);
Dataset ingest_file(const std::string& path, MetricKind kind);

std::string record_to_line(const EvalRecord& rec);

struct GroupingSpec {
  enum class Mode { GivenKeys, ExternalAssignment };
  Mode mode = Mode::GivenKeys;
  // example_id -> group label, required for ExternalAssignment.
  std::unordered_map<std::string, std::string> assignment;
};

// Exhaustive, disjoint partition by group label, ordered lexicographically
// by group_key. Records keep their input order within each subgroup.
std::vector<SubgroupData> partition_by_group(const Dataset& data,
                                             const GroupingSpec& grouping);

// Split each subgroup by model_id into estimation units (one unit per
// model/group pair), ordered lexicographically by (group_key, model_id).
std::vector<SubgroupData> split_by_model(std::span<const SubgroupData> groups);

// Unit accessors. unit_model throws if the records span several models;
// unit_task returns the most frequent task_id (ties to the smallest).
std::string unit_model(const SubgroupData& unit);
std::string unit_task(const SubgroupData& unit);

// Number of distinct examples in a subgroup, where an example is identified
// by (task_id, example_id) and may carry records from several models.
std::size_t distinct_example_count(const SubgroupData& group);

}  // namespace ebench
