#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebench/features.hpp"
#include "ebench/intervals.hpp"
#include "ebench/metrics.hpp"
#include "ebench/regression.hpp"

namespace ebench {

enum class Method { DT, SR, EB, JS, StructReg };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// One estimation unit after aggregation: the summary plus the identity
// columns that reports and stratified splitting need.
struct GroupInput {
  std::string group_key;
  std::string model_id;
  std::string task_id;
  MetricSummary summary;
  // True for synthetic draws where the sampling variance is known rather
  // than estimated; affects the direct-estimator interval only.
  bool var_known = false;
};

// Shrinkage diagnostics for one (fold, pool scope) cell.
struct ShrinkageFit {
  int fold_id = -1;          // -1 when not cross-fitted (James-Stein)
  std::string scope = "all"; // "all" or a model_id under per-model pooling
  double A_hat = 0.0;
  double kappa_hat = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> group_indices;  // rows of the input span
  std::vector<double> prior_means;
  std::vector<double> weights;
  std::vector<double> residuals;
};

struct EstimateRow {
  std::string group_key;
  std::string model_id;
  std::string task_id;
  long n = 0;
  double Z = 0.0;
  double sigma2_hat = 0.0;
  std::optional<double> f_hat;
  std::optional<double> A_hat;
  std::optional<double> weight;
  double estimate = 0.0;
  std::optional<ConfidenceInterval> ci;
};

struct EstimateTable {
  Method method = Method::DT;
  std::vector<EstimateRow> rows;  // lexicographic (group_key, model_id)
  std::uint64_t seed = 0;
};

std::string estimate_table_csv_header();
std::string estimate_table_to_csv(const EstimateTable& table,
                                  bool with_header = true);

enum class PoolScope { All, PerModel };

// Builds canonical GroupInputs from estimation units (see split_by_model).
std::vector<GroupInput> make_group_inputs(std::span<const SubgroupData> units,
                                          MetricKind kind);

// DT: the subgroup empirical mean, exactly.
double direct(const MetricSummary& summary);
EstimateTable direct_table(std::span<const GroupInput> inputs);

// A_hat = positive part of mean(residual^2 - sigma2_hat).
double estimate_A(std::span<const double> residuals,
                  std::span<const double> variances);

// Posterior-form combination (sigma2*f + A*Z) / (sigma2 + A).
double eb_combine(double Z, double f_hat, double sigma2, double A_hat);

struct EbResult {
  EstimateTable table;
  std::vector<ShrinkageFit> fits;
};

// Cross-fitted EB: two folds split by a seeded shuffle stratified by
// model_id; the prior-mean regressor is fit (with nested CV) on one fold and
// applied to the other, then A_hat and kappa_hat come from the held-out
// residuals. pool_scope controls whether A_hat pools all subgroups or is
// computed per model. Estimates for bounded metrics are clamped to [0,1].
EbResult eb_cross_fit(std::span<const GroupInput> inputs,
                      const FeatureMatrix& features, const RegressorSpec& spec,
                      std::uint64_t seed, PoolScope pool_scope = PoolScope::All);

// James-Stein: the EB pipeline with the prior mean fixed at the
// precision-weighted grand mean; no cross-fitting. min_groups exists so unit
// tests can exercise the closed-form two-group cases.
EbResult james_stein(std::span<const GroupInput> inputs, int min_groups = 4);

// Plain SR: fit on all subgroups (CV-tuned), predict on all.
EstimateTable sr_table(std::span<const GroupInput> inputs,
                       const FeatureMatrix& features, const RegressorSpec& spec,
                       std::uint64_t seed);

// Precision-weighted Lasso over unit intercepts plus SR features; the
// features must contain a "unit" block (FeatureConfig::unit_intercept).
EstimateTable structured_regression(std::span<const GroupInput> inputs,
                                    const FeatureMatrix& features,
                                    std::span<const double> lambda_grid,
                                    std::uint64_t seed);

// Attach intervals in place: Wilson/Student-t for DT rows, robust EB
// intervals (per-fold A_hat, kappa_hat) for EB/JS rows.
void attach_dt_intervals(EstimateTable& table,
                         std::span<const GroupInput> inputs, double alpha);
void attach_robust_intervals(EstimateTable& table,
                             std::span<const GroupInput> inputs,
                             std::span<const ShrinkageFit> fits, double alpha,
                             bool use_kappa_constraint = false);

}  // namespace ebench
