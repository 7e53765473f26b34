#include <doctest.h>

#include <vector>

#include "ebench/error.hpp"
#include "ebench/metrics.hpp"
#include "ebench/rng.hpp"

using namespace ebench;

namespace {

SubgroupData make_group(const std::string& key,
                        const std::vector<double>& scores) {
  SubgroupData g;
  g.group_key = key;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EvalRecord r;
    r.example_id = key + "_" + std::to_string(i);
    r.model_id = "m";
    r.task_id = "t";
    r.group_key = key;
    r.score = scores[i];
    g.records.push_back(std::move(r));
  }
  return g;
}

}  // namespace

TEST_CASE("summarize: binary mean and count") {
  const auto s =
      summarize(make_group("g", {1, 0, 1, 1}), MetricKind::BinaryAccuracy);
  CHECK(s.Z == doctest::Approx(0.75));
  CHECK(s.n == 4);
  REQUIRE(s.success_count.has_value());
  CHECK(*s.success_count == 3);
}

TEST_CASE("summarize: bounded mean") {
  const auto s =
      summarize(make_group("g", {0.5, 0.7}), MetricKind::BoundedScore);
  CHECK(s.Z == doctest::Approx(0.6));
  CHECK(s.n == 2);
}

TEST_CASE("summarize: empty subgroup errors") {
  CHECK_THROWS_AS(summarize(make_group("g", {}), MetricKind::BinaryAccuracy),
                  ArgumentError);
}

TEST_CASE("summarize: nonconforming score errors") {
  CHECK_THROWS_AS(
      summarize(make_group("g", {0.25}), MetricKind::BinaryAccuracy),
      DomainError);
  CHECK_THROWS_AS(
      summarize(make_group("g", {1.25, 0.5}), MetricKind::BoundedScore),
      DomainError);
}

TEST_CASE("variance_of: smoothed binary plug-in") {
  // k=5, n=10: smoothing leaves the balanced case at the plug-in value.
  std::vector<double> five(10, 0.0);
  for (int i = 0; i < 5; ++i) five[i] = 1.0;
  CHECK(variance_of(five, MetricKind::BinaryAccuracy) ==
        doctest::Approx(0.025).epsilon(1e-12));
  // k=10, n=10: zt = 10.5/11, var = zt*(1-zt)/10 = 5.25/121/10.
  // (The unsmoothed plug-in would be exactly 0.)
  const std::vector<double> all_ones(10, 1.0);
  CHECK(variance_of(all_ones, MetricKind::BinaryAccuracy) ==
        doctest::Approx(5.25 / 121.0 / 10.0).epsilon(1e-12));
}

TEST_CASE("variance_of: continuous sample variance of the mean") {
  const std::vector<double> v{0.0, 1.0};
  CHECK(variance_of(v, MetricKind::BoundedScore) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("variance_of: permutation invariant") {
  Rng rng(11);
  std::vector<double> v;
  for (int i = 0; i < 25; ++i) v.push_back(rng.uniform());
  const double base = variance_of(v, MetricKind::BoundedScore);
  rng.shuffle(v);
  CHECK(variance_of(v, MetricKind::BoundedScore) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("variance_of: strictly positive for binary at any k, n") {
  for (int n = 1; n <= 12; ++n) {
    for (int k = 0; k <= n; ++k) {
      std::vector<double> v(n, 0.0);
      for (int i = 0; i < k; ++i) v[i] = 1.0;
      CHECK(variance_of(v, MetricKind::BinaryAccuracy) > 0.0);
    }
  }
}

TEST_CASE("variance_of: scaling continuous scores by c scales var by c^2") {
  Rng rng(5);
  std::vector<double> v, w;
  for (int i = 0; i < 30; ++i) v.push_back(rng.normal());
  const double c = 3.7;
  for (double x : v) w.push_back(c * x);
  CHECK(variance_of(w, MetricKind::Unbounded) ==
        doctest::Approx(c * c * variance_of(v, MetricKind::Unbounded))
            .epsilon(1e-10));
}

TEST_CASE("singleton continuous subgroup uses the pooled fallback") {
  CHECK_THROWS_AS(variance_of(std::vector<double>{0.4}, MetricKind::BoundedScore),
                  DomainError);
  std::vector<SubgroupData> groups;
  groups.push_back(make_group("a", {0.2, 0.4, 0.6}));
  groups.push_back(make_group("b", {0.5}));
  const auto summaries = summarize_groups(groups, MetricKind::BoundedScore);
  REQUIRE(summaries.size() == 2);
  CHECK_FALSE(summaries[0].var_pooled_fallback);
  CHECK(summaries[1].var_pooled_fallback);
  // pooled s^2 over the size-3 group, divided by n=1
  CHECK(summaries[1].var_hat ==
        doctest::Approx(pooled_variance(groups)).epsilon(1e-12));
  CHECK(summaries[1].var_hat > 0.0);
}

TEST_CASE("binary singleton needs no fallback") {
  std::vector<SubgroupData> groups;
  groups.push_back(make_group("a", {1.0}));
  const auto summaries = summarize_groups(groups, MetricKind::BinaryAccuracy);
  CHECK_FALSE(summaries[0].var_pooled_fallback);
  CHECK(summaries[0].var_hat > 0.0);
}
