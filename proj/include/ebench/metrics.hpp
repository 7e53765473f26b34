#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebench/records.hpp"

namespace ebench {

// Per-subgroup aggregate: empirical mean Z, size n and an estimate of the
// sampling variance of Z.
struct MetricSummary {
  std::string group_key;
  MetricKind metric_kind = MetricKind::BoundedScore;
  double Z = 0.0;
  long n = 0;
  double var_hat = 0.0;
  std::optional<long> success_count;  // binary metrics only
  // Set when var_hat came from the pooled across-subgroup fallback
  // (singleton continuous subgroups).
  bool var_pooled_fallback = false;
};

// Sampling-variance estimate for the subgroup mean.
//   BinaryAccuracy:  zt*(1-zt)/n with zt = (k+0.5)/(n+1). The smoothing
//                    keeps the estimate strictly positive at k=0 or k=n;
//                    Z itself is never smoothed.
//   Bounded/Unbounded: sample variance / n. A single score cannot estimate
//                    its own variance; use summarize_groups for the pooled
//                    fallback, this function throws.
double variance_of(std::span<const double> scores, MetricKind kind);

MetricSummary summarize(const SubgroupData& group, MetricKind kind);

// Summaries for a whole partition. Continuous subgroups of size one receive
// the pooled across-subgroup sample variance and are flagged.
std::vector<MetricSummary> summarize_groups(std::span<const SubgroupData> groups,
                                            MetricKind kind);

// Pooled sample variance across subgroups (within-group deviations over
// groups with n >= 2).
double pooled_variance(std::span<const SubgroupData> groups);

}  // namespace ebench
