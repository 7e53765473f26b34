#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebench/features.hpp"

namespace ebench {

enum class RegressorFamily { Ridge, WeightedLasso, BoostedStumps };

std::string regressor_family_name(RegressorFamily f);
RegressorFamily regressor_family_from_name(const std::string& name);

// Hyperparameters are selected by cv_folds-fold cross-validation minimizing
// weighted squared error on held-out rows, then the model is refit on all
// rows. Weights are normalized to mean one inside fit, so scaling all
// weights by a constant does not change the solution.
struct RegressorSpec {
  RegressorFamily family = RegressorFamily::Ridge;
  std::vector<double> lambda_grid = {0.01, 0.1, 1.0, 10.0};
  std::vector<int> tree_grid = {25, 50, 100};  // BoostedStumps only
  int cv_folds = 2;
  std::optional<std::string> stratify_by = "task";
  std::uint64_t seed = 0;
  bool fit_intercept = true;
  bool standardize = true;
  int max_sweeps = 10000;      // coordinate-descent sweep cap
  double cd_tol = 1e-10;       // stop when max coordinate change is below
  double stump_shrinkage = 0.1;
};

struct Stump {
  int feature = 0;
  double threshold = 0.0;
  double left = 0.0;   // value when x[feature] <= threshold
  double right = 0.0;  // shrinkage already applied
};

struct RegressionModel {
  RegressorFamily family = RegressorFamily::Ridge;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // on the standardized feature scale
  std::vector<Stump> stumps;
  double stump_init = 0.0;
  double chosen_lambda = 0.0;
  int chosen_trees = 0;
  std::vector<FeatureBlock> schema;
  Eigen::VectorXd feat_mean;   // standardization statistics (identity when
  Eigen::VectorXd feat_scale;  // standardization is off)
};

RegressionModel fit(const FeatureMatrix& features,
                    std::span<const double> targets,
                    std::span<const double> weights, const RegressorSpec& spec);

std::vector<double> predict(const RegressionModel& model,
                            const FeatureMatrix& features);

// Self-describing JSON text artifact (schema + coefficients).
std::string dump_model(const RegressionModel& model);
RegressionModel load_model(const std::string& text);

}  // namespace ebench
