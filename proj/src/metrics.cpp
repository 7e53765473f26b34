#include "ebench/metrics.hpp"

#include <cmath>

#include "ebench/error.hpp"

namespace ebench {

namespace {

void check_scores(std::span<const double> scores, MetricKind kind) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw DomainError("score is not finite");
    if (kind == MetricKind::BinaryAccuracy && s != 0.0 && s != 1.0) {
      throw DomainError("binary metric requires scores in {0,1}");
    }
    if (kind == MetricKind::BoundedScore && (s < 0.0 || s > 1.0)) {
      throw DomainError("bounded metric requires scores in [0,1]");
    }
  }
}

double mean_of(std::span<const double> scores) {
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double sample_variance(std::span<const double> scores) {
  const double m = mean_of(scores);
  double ss = 0.0;
  for (double s : scores) ss += (s - m) * (s - m);
  return ss / static_cast<double>(scores.size() - 1);
}

}  // namespace

double variance_of(std::span<const double> scores, MetricKind kind) {
  if (scores.empty()) throw ArgumentError("variance_of: no scores");
  check_scores(scores, kind);
  const auto n = static_cast<double>(scores.size());
  if (kind == MetricKind::BinaryAccuracy) {
    double k = 0.0;
    for (double s : scores) k += s;
    const double zt = (k + 0.5) / (n + 1.0);
    return zt * (1.0 - zt) / n;
  }
  if (scores.size() == 1) {
    throw DomainError(
        "variance_of: singleton continuous subgroup needs the pooled "
        "fallback (use summarize_groups)");
  }
  return sample_variance(scores) / n;
}

namespace {

std::vector<double> collect_scores(const SubgroupData& group) {
  std::vector<double> scores;
  scores.reserve(group.records.size());
  for (const auto& rec : group.records) scores.push_back(rec.score);
  return scores;
}

MetricSummary summarize_scores(const std::string& key,
                               std::span<const double> scores,
                               MetricKind kind) {
  if (scores.empty()) {
    throw ArgumentError("summarize: subgroup '" + key + "' is empty");
  }
  check_scores(scores, kind);
  MetricSummary s;
  s.group_key = key;
  s.metric_kind = kind;
  s.n = static_cast<long>(scores.size());
  s.Z = mean_of(scores);
  if (kind == MetricKind::BinaryAccuracy) {
    long k = 0;
    for (double v : scores) k += (v == 1.0) ? 1 : 0;
    s.success_count = k;
  }
  s.var_hat = variance_of(scores, kind);  // may throw for singleton continuous
  return s;
}

}  // namespace

MetricSummary summarize(const SubgroupData& group, MetricKind kind) {
  return summarize_scores(group.group_key, collect_scores(group), kind);
}

double pooled_variance(std::span<const SubgroupData> groups) {
  double ss = 0.0;
  long dof = 0;
  for (const auto& g : groups) {
    if (g.records.size() < 2) continue;
    const auto scores = collect_scores(g);
    const double m = mean_of(scores);
    for (double s : scores) ss += (s - m) * (s - m);
    dof += static_cast<long>(scores.size()) - 1;
  }
  if (dof == 0) {
    throw DomainError(
        "pooled_variance: no subgroup with two or more observations");
  }
  return ss / static_cast<double>(dof);
}

std::vector<MetricSummary> summarize_groups(
    std::span<const SubgroupData> groups, MetricKind kind) {
  std::vector<MetricSummary> out;
  out.reserve(groups.size());
  std::optional<double> pooled;
  for (const auto& g : groups) {
    if (kind != MetricKind::BinaryAccuracy && g.records.size() == 1) {
      if (!pooled) pooled = pooled_variance(groups);
      MetricSummary s;
      s.group_key = g.group_key;
      s.metric_kind = kind;
      s.n = 1;
      s.Z = g.records.front().score;
      check_scores(std::vector<double>{s.Z}, kind);
      s.var_hat = *pooled;  // pooled s^2 / n with n = 1
      s.var_pooled_fallback = true;
      out.push_back(std::move(s));
    } else {
      out.push_back(summarize(g, kind));
    }
  }
  return out;
}

}  // namespace ebench
