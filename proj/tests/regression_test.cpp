#include <doctest.h>

#include <cmath>
#include <vector>

#include "ebench/error.hpp"
#include "ebench/regression.hpp"
#include "ebench/rng.hpp"

using namespace ebench;

namespace {

SubgroupData make_unit(const std::string& group, const std::string& model,
                       const std::string& task, int n_records,
                       const std::vector<double>& embedding, double confidence,
                       double score) {
  SubgroupData u;
  u.group_key = group;
  for (int i = 0; i < n_records; ++i) {
    EvalRecord r;
    r.example_id = group + "_" + std::to_string(i);
    r.model_id = model;
    r.task_id = task;
    r.group_key = group;
    r.score = score;
    r.confidence = confidence;
    r.embedding = embedding;
    u.records.push_back(std::move(r));
  }
  return u;
}

FeatureMatrix raw_matrix(const Eigen::MatrixXd& X) {
  FeatureMatrix fm;
  fm.X = X;
  fm.schema = {{"raw", static_cast<std::size_t>(X.cols()), false}};
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    fm.group_keys.push_back("r" + std::to_string(i));
  }
  return fm;
}

RegressorSpec plain_spec(RegressorFamily family, double lambda) {
  RegressorSpec s;
  s.family = family;
  s.lambda_grid = {lambda};
  s.fit_intercept = false;
  s.standardize = false;
  s.stratify_by.reset();
  return s;
}

}  // namespace

TEST_CASE("build_features: block widths add up") {
  std::vector<SubgroupData> units;
  units.push_back(make_unit("g1", "mA", "t1", 3, {0.1, 0.2, 0.3, 0.4}, 0.5, 1));
  units.push_back(make_unit("g2", "mB", "t2", 2, {1, 1, 1, 1}, 0.25, 0));
  units.push_back(make_unit("g3", "mA", "t3", 2, {0, 0, 0, 0}, 0.75, 1));
  FeatureConfig cfg;  // all standard blocks on
  const auto fm = build_features(units, cfg);
  // 4 (embedding) + 1 (confidence) + 2 (models) + 3 (tasks)
  CHECK(fm.cols() == 10);
  CHECK(fm.rows() == 3);
  // one-hot blocks have exactly one 1 per row
  for (const char* block : {"model", "task"}) {
    const auto [off, width] = fm.block_span(block);
    for (std::size_t i = 0; i < fm.rows(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < width; ++j) sum += fm.X(i, off + j);
      CHECK(sum == doctest::Approx(1.0));
    }
  }
  // embedding means
  const auto [eoff, ewidth] = fm.block_span("embedding");
  CHECK(fm.X(0, eoff + 3) == doctest::Approx(0.4));

  FeatureConfig no_emb = cfg;
  no_emb.embedding = false;
  CHECK(build_features(units, no_emb).cols() == 6);
}

TEST_CASE("build_features: missing confidence is a named error") {
  std::vector<SubgroupData> units;
  auto u = make_unit("g1", "m", "t", 2, {0.1}, 0.5, 1);
  u.records[1].confidence.reset();
  units.push_back(u);
  units.push_back(make_unit("g2", "m", "t", 2, {0.2}, 0.5, 0));
  FeatureConfig cfg;
  try {
    build_features(units, cfg);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("confidence") != std::string::npos);
    CHECK(std::string(e.what()).find("g1") != std::string::npos);
  }
}

TEST_CASE("lasso: orthonormal design matches closed-form soft threshold") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(2, 2);
  const std::vector<double> y{3.0, 0.5};
  const std::vector<double> w{1.0, 1.0};
  const auto model =
      fit(raw_matrix(X), y, w, plain_spec(RegressorFamily::WeightedLasso, 1.0));
  // beta_j = sign(y_j) * max(|y_j| - lambda/2, 0)
  CHECK(model.coefficients(0) == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(model.coefficients(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ridge: identity design gives y/(1+lambda)") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(3, 3);
  const std::vector<double> y{1.0, -2.0, 0.5};
  const std::vector<double> w{1.0, 1.0, 1.0};
  const double lambda = 0.7;
  const auto model =
      fit(raw_matrix(X), y, w, plain_spec(RegressorFamily::Ridge, lambda));
  for (int j = 0; j < 3; ++j) {
    CHECK(model.coefficients(j) ==
          doctest::Approx(y[j] / (1.0 + lambda)).epsilon(1e-10));
  }
}

TEST_CASE("lasso: lambda=0 interpolates a full-rank identity design") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(4, 4);
  const std::vector<double> y{0.2, 0.8, -0.3, 1.5};
  const std::vector<double> w{1, 1, 1, 1};
  const auto model =
      fit(raw_matrix(X), y, w, plain_spec(RegressorFamily::WeightedLasso, 0.0));
  for (int j = 0; j < 4; ++j) {
    CHECK(model.coefficients(j) == doctest::Approx(y[j]).epsilon(1e-9));
  }
}

TEST_CASE("lasso: KKT conditions hold at the solution") {
  Rng rng(41);
  const int n = 20, p = 8;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n), w(n);
  for (int i = 0; i < n; ++i) {
    y[i] = rng.normal();
    w[i] = 0.5 + rng.uniform();
  }
  const double lambda = 0.8;
  auto spec = plain_spec(RegressorFamily::WeightedLasso, lambda);
  spec.fit_intercept = true;
  const auto model = fit(raw_matrix(X), y, w, spec);

  // Recompute the weighted gradient; weights are normalized to mean 1 in fit.
  Eigen::VectorXd wn(n);
  double wsum = 0;
  for (int i = 0; i < n; ++i) wsum += w[i];
  for (int i = 0; i < n; ++i) wn(i) = w[i] * n / wsum;
  Eigen::VectorXd resid(n);
  for (int i = 0; i < n; ++i) {
    double pred = model.intercept;
    for (int j = 0; j < p; ++j) pred += X(i, j) * model.coefficients(j);
    resid(i) = y[i] - pred;
  }
  for (int j = 0; j < p; ++j) {
    double grad = 0;
    for (int i = 0; i < n; ++i) grad += -2.0 * wn(i) * X(i, j) * resid(i);
    if (model.coefficients(j) == 0.0) {
      CHECK(std::fabs(grad) <= lambda + 1e-8);
    } else {
      const double sign = model.coefficients(j) > 0 ? 1.0 : -1.0;
      CHECK(grad + sign * lambda == doctest::Approx(0.0).epsilon(1).scale(1e-8));
    }
  }
  // intercept stationarity
  double g0 = 0;
  for (int i = 0; i < n; ++i) g0 += wn(i) * resid(i);
  CHECK(g0 == doctest::Approx(0.0).epsilon(1).scale(1e-8));
}

TEST_CASE("lasso: solution minimizes the objective against perturbations") {
  Rng rng(42);
  const int n = 18, p = 6;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n), w(n);
  for (int i = 0; i < n; ++i) {
    y[i] = rng.normal();
    w[i] = 0.5 + rng.uniform();
  }
  const double lambda = 0.6;
  auto spec = plain_spec(RegressorFamily::WeightedLasso, lambda);
  spec.fit_intercept = true;
  const auto model = fit(raw_matrix(X), y, w, spec);

  Eigen::VectorXd wn(n);
  double wsum = 0;
  for (int i = 0; i < n; ++i) wsum += w[i];
  for (int i = 0; i < n; ++i) wn(i) = w[i] * n / wsum;
  auto objective = [&](double b0, const Eigen::VectorXd& beta) {
    double obj = 0;
    for (int i = 0; i < n; ++i) {
      double pred = b0;
      for (int j = 0; j < p; ++j) pred += X(i, j) * beta(j);
      obj += wn(i) * (pred - y[i]) * (pred - y[i]);
    }
    for (int j = 0; j < p; ++j) obj += lambda * std::fabs(beta(j));
    return obj;
  };
  const double at_solution = objective(model.intercept, model.coefficients);
  // the zero start must not beat the converged solution
  CHECK(at_solution <= objective(0.0, Eigen::VectorXd::Zero(p)) + 1e-12);
  for (int rep = 0; rep < 40; ++rep) {
    Eigen::VectorXd beta = model.coefficients;
    const int j = static_cast<int>(rng.below(p));
    beta(j) += (rng.uniform() - 0.5) * 0.2;
    const double b0 = model.intercept + (rng.uniform() - 0.5) * 0.2;
    CHECK(at_solution <= objective(b0, beta) + 1e-10);
  }
}

TEST_CASE("lasso: equal weights match the unweighted fit") {
  Rng rng(43);
  const int n = 15, p = 5;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.normal();
  const std::vector<double> ones(n, 1.0);
  const std::vector<double> sevens(n, 7.0);
  auto spec = plain_spec(RegressorFamily::WeightedLasso, 0.4);
  spec.fit_intercept = true;
  const auto a = fit(raw_matrix(X), y, ones, spec);
  const auto b = fit(raw_matrix(X), y, sevens, spec);
  CHECK(a.intercept == doctest::Approx(b.intercept).epsilon(1e-10));
  for (int j = 0; j < p; ++j) {
    CHECK(a.coefficients(j) ==
          doctest::Approx(b.coefficients(j)).epsilon(1).scale(1e-10));
  }
}

TEST_CASE("lasso: interpolation as lambda -> 0 with p = 2G") {
  Rng rng(47);
  const int n = 24, p = 48;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n), w(n, 1.0);
  for (int i = 0; i < n; ++i) y[i] = rng.uniform();
  auto spec = plain_spec(RegressorFamily::WeightedLasso, 1e-8);
  spec.fit_intercept = true;
  const auto fm = raw_matrix(X);
  const auto model = fit(fm, y, w, spec);
  const auto pred = predict(model, fm);
  double max_gap = 0;
  for (int i = 0; i < n; ++i) max_gap = std::max(max_gap, std::fabs(pred[i] - y[i]));
  CHECK(max_gap < 1e-4);
}

TEST_CASE("cross-validation is deterministic given the seed") {
  Rng rng(51);
  const int n = 16, p = 4;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n), w(n, 1.0);
  for (int i = 0; i < n; ++i) y[i] = X(i, 0) * 0.8 + 0.1 * rng.normal();
  RegressorSpec spec;
  spec.family = RegressorFamily::Ridge;
  spec.lambda_grid = {0.01, 0.1, 1.0, 10.0};
  spec.seed = 77;
  spec.stratify_by.reset();
  const auto a = fit(raw_matrix(X), y, w, spec);
  const auto b = fit(raw_matrix(X), y, w, spec);
  CHECK(a.chosen_lambda == b.chosen_lambda);
  for (int j = 0; j < p; ++j) {
    CHECK(a.coefficients(j) == b.coefficients(j));
  }
}

TEST_CASE("predict: linear dot product and schema mismatch") {
  Eigen::MatrixXd X(1, 2);
  X << 0.5, 0.0;
  const auto fm = raw_matrix(X);
  RegressionModel model;
  model.family = RegressorFamily::Ridge;
  model.intercept = 0.1;
  model.coefficients = Eigen::VectorXd::Zero(2);
  model.coefficients(0) = 1.0;
  model.schema = fm.schema;
  model.feat_mean = Eigen::VectorXd::Zero(2);
  model.feat_scale = Eigen::VectorXd::Ones(2);
  const auto pred = predict(model, fm);
  CHECK(pred[0] == doctest::Approx(0.6));

  FeatureMatrix other = fm;
  other.schema[0].name = "different";
  CHECK_THROWS_AS(predict(model, other), SchemaError);
}

TEST_CASE("predict: zero-coefficient model is constant") {
  Eigen::MatrixXd X(3, 2);
  X << 1, 2, 3, 4, 5, 6;
  const auto fm = raw_matrix(X);
  RegressionModel model;
  model.family = RegressorFamily::Ridge;
  model.intercept = 0.42;
  model.coefficients = Eigen::VectorXd::Zero(2);
  model.schema = fm.schema;
  model.feat_mean = Eigen::VectorXd::Zero(2);
  model.feat_scale = Eigen::VectorXd::Ones(2);
  for (double v : predict(model, fm)) CHECK(v == doctest::Approx(0.42));
}

TEST_CASE("stumps: single-stump prediction follows the split") {
  Eigen::MatrixXd X(2, 1);
  X << 1.0, -1.0;
  const auto fm = raw_matrix(X);
  RegressionModel model;
  model.family = RegressorFamily::BoostedStumps;
  model.stump_init = 0.0;
  model.stumps = {Stump{0, 0.0, 0.2, 0.8}};
  model.coefficients = Eigen::VectorXd::Zero(1);
  model.schema = fm.schema;
  model.feat_mean = Eigen::VectorXd::Zero(1);
  model.feat_scale = Eigen::VectorXd::Ones(1);
  const auto pred = predict(model, fm);
  CHECK(pred[0] == doctest::Approx(0.8));  // feature > threshold -> right
  CHECK(pred[1] == doctest::Approx(0.2));
}

TEST_CASE("stumps: boosting reduces training error on a step function") {
  Rng rng(53);
  const int n = 40;
  Eigen::MatrixXd X(n, 2);
  std::vector<double> y(n), w(n, 1.0);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform();
    X(i, 1) = rng.uniform();
    y[i] = X(i, 0) > 0.5 ? 0.9 : 0.1;
  }
  RegressorSpec spec;
  spec.family = RegressorFamily::BoostedStumps;
  spec.tree_grid = {100};
  spec.standardize = false;
  spec.stratify_by.reset();
  const auto fm = raw_matrix(X);
  const auto model = fit(fm, y, w, spec);
  const auto pred = predict(model, fm);
  double sse = 0;
  for (int i = 0; i < n; ++i) sse += (pred[i] - y[i]) * (pred[i] - y[i]);
  CHECK(sse / n < 1e-3);
}

TEST_CASE("fit input validation") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(3, 3);
  const auto fm = raw_matrix(X);
  std::vector<double> y{1, 2, 3}, w{1, 1, 1};
  RegressorSpec spec;
  spec.cv_folds = 4;  // more folds than rows
  CHECK_THROWS_AS(fit(fm, y, w, spec), ArgumentError);
  spec.cv_folds = 2;
  y[1] = std::nan("");
  CHECK_THROWS_AS(fit(fm, y, w, spec), DomainError);
  y[1] = 2;
  w[0] = 0.0;
  CHECK_THROWS_AS(fit(fm, y, w, spec), ArgumentError);
  w[0] = 1.0;
  spec.lambda_grid.clear();
  CHECK_THROWS_AS(fit(fm, y, w, spec), ArgumentError);
}

TEST_CASE("model dump/load round trip preserves predictions") {
  Rng rng(59);
  const int n = 12, p = 3;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  std::vector<double> y(n), w(n, 1.0);
  for (int i = 0; i < n; ++i) y[i] = rng.normal();
  RegressorSpec spec;
  spec.family = RegressorFamily::Ridge;
  spec.lambda_grid = {0.5};
  spec.stratify_by.reset();
  const auto fm = raw_matrix(X);
  const auto model = fit(fm, y, w, spec);
  const auto loaded = load_model(dump_model(model));
  const auto a = predict(model, fm);
  const auto b = predict(loaded, fm);
  for (int i = 0; i < n; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
  CHECK_THROWS_AS(load_model("not json"), ParseError);
  CHECK_THROWS_AS(load_model("{}"), SchemaError);
}
