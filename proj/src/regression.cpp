#include "ebench/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "ebench/error.hpp"
#include "ebench/rng.hpp"

namespace ebench {

using nlohmann::json;

std::string regressor_family_name(RegressorFamily f) {
  switch (f) {
    case RegressorFamily::Ridge:
      return "ridge";
    case RegressorFamily::WeightedLasso:
      return "lasso";
    case RegressorFamily::BoostedStumps:
      return "stumps";
  }
  return "unknown";
}

RegressorFamily regressor_family_from_name(const std::string& name) {
  if (name == "ridge") return RegressorFamily::Ridge;
  if (name == "lasso") return RegressorFamily::WeightedLasso;
  if (name == "stumps") return RegressorFamily::BoostedStumps;
  throw ArgumentError("unknown regressor family: " + name);
}

namespace {

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd out = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      out.col(j) = (X.col(j).array() - mean(j)) / scale(j);
    }
    return out;
  }
};

// Center/scale continuous blocks by the given rows; indicator blocks pass
// through untouched.
Standardizer make_standardizer(const Eigen::MatrixXd& X,
                               const std::vector<FeatureBlock>& schema,
                               bool enabled) {
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(X.cols());
  s.scale = Eigen::VectorXd::Ones(X.cols());
  if (!enabled || X.rows() == 0) return s;
  std::size_t off = 0;
  for (const auto& b : schema) {
    if (b.continuous) {
      for (std::size_t j = off; j < off + b.width; ++j) {
        const auto col = X.col(static_cast<Eigen::Index>(j));
        const double m = col.mean();
        const double var =
            (col.array() - m).square().sum() / std::max<double>(1.0, X.rows());
        const double sd = std::sqrt(var);
        s.mean(static_cast<Eigen::Index>(j)) = m;
        if (sd > 0.0) s.scale(static_cast<Eigen::Index>(j)) = sd;
      }
    }
    off += b.width;
  }
  return s;
}

struct LinearFit {
  double intercept = 0.0;
  Eigen::VectorXd beta;
};

LinearFit fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& w, double lambda,
                    bool fit_intercept) {
  const Eigen::Index p = X.cols();
  if (fit_intercept) {
    Eigen::MatrixXd Z(X.rows(), p + 1);
    Z.col(0).setOnes();
    Z.rightCols(p) = X;
    Eigen::MatrixXd A = Z.transpose() * w.asDiagonal() * Z;
    for (Eigen::Index j = 1; j <= p; ++j) A(j, j) += lambda;
    A(0, 0) += 1e-12;  // keep the solve well-posed when all weights vanish
    const Eigen::VectorXd b = Z.transpose() * (w.array() * y.array()).matrix();
    const Eigen::VectorXd sol = A.ldlt().solve(b);
    LinearFit f;
    f.intercept = sol(0);
    f.beta = sol.tail(p);
    return f;
  }
  Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
  for (Eigen::Index j = 0; j < p; ++j) A(j, j) += std::max(lambda, 1e-12);
  const Eigen::VectorXd b = X.transpose() * (w.array() * y.array()).matrix();
  LinearFit f;
  f.intercept = 0.0;
  f.beta = A.ldlt().solve(b);
  return f;
}

// Cyclic coordinate descent for
//   sum_g w_g (b0 + x_g.beta - y_g)^2 + lambda * sum_j |beta_j|
// with the intercept unpenalized. Soft threshold at lambda/2 because the
// squared loss carries no 1/2 factor.
LinearFit fit_lasso_cd(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& w, double lambda,
                       bool fit_intercept, int max_sweeps, double tol) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  LinearFit f;
  f.beta = Eigen::VectorXd::Zero(p);
  const double w_total = w.sum();
  f.intercept = 0.0;
  Eigen::VectorXd r = y;
  if (fit_intercept && w_total > 0.0) {
    f.intercept = (w.array() * y.array()).sum() / w_total;
    r.array() -= f.intercept;
  }
  Eigen::VectorXd colsq(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    colsq(j) = (w.array() * X.col(j).array().square()).sum();
  }
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (colsq(j) <= 0.0) continue;
      double rho = f.beta(j) * colsq(j);
      for (Eigen::Index i = 0; i < n; ++i) rho += w(i) * X(i, j) * r(i);
      const double thr = 0.5 * lambda;
      double bj = 0.0;
      if (rho > thr) {
        bj = (rho - thr) / colsq(j);
      } else if (rho < -thr) {
        bj = (rho + thr) / colsq(j);
      }
      const double delta = bj - f.beta(j);
      if (delta != 0.0) {
        r -= delta * X.col(j);
        f.beta(j) = bj;
        max_delta = std::max(max_delta, std::fabs(delta));
      }
    }
    if (fit_intercept && w_total > 0.0) {
      const double delta = (w.array() * r.array()).sum() / w_total;
      if (delta != 0.0) {
        f.intercept += delta;
        r.array() -= delta;
        max_delta = std::max(max_delta, std::fabs(delta));
      }
    }
    if (max_delta < tol) break;
  }
  return f;
}

struct StumpFit {
  double init = 0.0;
  std::vector<Stump> stumps;
};

// Depth-1 gradient boosting with squared loss: each round fits the best
// single split to the current residuals.
StumpFit fit_stumps(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& w, int rounds, double shrinkage) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  StumpFit fit;
  const double w_total = w.sum();
  fit.init = w_total > 0.0 ? (w.array() * y.array()).sum() / w_total : 0.0;
  Eigen::VectorXd r = y.array() - fit.init;

  std::vector<std::vector<Eigen::Index>> order(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    order[j].resize(n);
    std::iota(order[j].begin(), order[j].end(), 0);
    std::sort(order[j].begin(), order[j].end(),
              [&](Eigen::Index a, Eigen::Index b) {
                return X(a, j) < X(b, j);
              });
  }

  for (int m = 0; m < rounds; ++m) {
    int best_j = -1;
    double best_thr = 0.0, best_left = 0.0, best_right = 0.0;
    double best_score = -1e-14;  // require a strict improvement
    const double sw_all = w.sum();
    const double swr_all = (w.array() * r.array()).sum();
    const double base = sw_all > 0.0 ? swr_all * swr_all / sw_all : 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      double sw_left = 0.0, swr_left = 0.0;
      for (Eigen::Index t = 0; t + 1 < n; ++t) {
        const Eigen::Index i = order[j][t];
        sw_left += w(i);
        swr_left += w(i) * r(i);
        const double x_cur = X(i, j);
        const double x_next = X(order[j][t + 1], j);
        if (x_next <= x_cur) continue;  // no split between equal values
        const double sw_right = sw_all - sw_left;
        if (sw_left <= 0.0 || sw_right <= 0.0) continue;
        const double swr_right = swr_all - swr_left;
        const double score = swr_left * swr_left / sw_left +
                             swr_right * swr_right / sw_right - base;
        if (score > best_score) {
          best_score = score;
          best_j = static_cast<int>(j);
          best_thr = 0.5 * (x_cur + x_next);
          best_left = swr_left / sw_left;
          best_right = swr_right / sw_right;
        }
      }
    }
    if (best_j < 0) break;
    Stump s;
    s.feature = best_j;
    s.threshold = best_thr;
    s.left = shrinkage * best_left;
    s.right = shrinkage * best_right;
    for (Eigen::Index i = 0; i < n; ++i) {
      r(i) -= (X(i, s.feature) <= s.threshold) ? s.left : s.right;
    }
    fit.stumps.push_back(s);
  }
  return fit;
}

Eigen::VectorXd predict_matrix(const RegressionModel& model,
                               const Eigen::MatrixXd& Xstd) {
  if (model.family == RegressorFamily::BoostedStumps) {
    Eigen::VectorXd out =
        Eigen::VectorXd::Constant(Xstd.rows(), model.stump_init);
    for (const auto& s : model.stumps) {
      for (Eigen::Index i = 0; i < Xstd.rows(); ++i) {
        out(i) += (Xstd(i, s.feature) <= s.threshold) ? s.left : s.right;
      }
    }
    return out;
  }
  return (Xstd * model.coefficients).array() + model.intercept;
}

RegressionModel fit_with_hyper(const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y,
                               const Eigen::VectorXd& w,
                               const std::vector<FeatureBlock>& schema,
                               const RegressorSpec& spec, double lambda,
                               int trees) {
  RegressionModel model;
  model.family = spec.family;
  model.schema = schema;
  const Standardizer std_ = make_standardizer(X, schema, spec.standardize);
  model.feat_mean = std_.mean;
  model.feat_scale = std_.scale;
  const Eigen::MatrixXd Xs = std_.apply(X);
  switch (spec.family) {
    case RegressorFamily::Ridge: {
      const LinearFit f = fit_ridge(Xs, y, w, lambda, spec.fit_intercept);
      model.intercept = f.intercept;
      model.coefficients = f.beta;
      model.chosen_lambda = lambda;
      break;
    }
    case RegressorFamily::WeightedLasso: {
      const LinearFit f = fit_lasso_cd(Xs, y, w, lambda, spec.fit_intercept,
                                       spec.max_sweeps, spec.cd_tol);
      model.intercept = f.intercept;
      model.coefficients = f.beta;
      model.chosen_lambda = lambda;
      break;
    }
    case RegressorFamily::BoostedStumps: {
      const StumpFit f = fit_stumps(Xs, y, w, trees, spec.stump_shrinkage);
      model.stump_init = f.init;
      model.stumps = f.stumps;
      model.chosen_trees = trees;
      model.coefficients = Eigen::VectorXd::Zero(X.cols());
      break;
    }
  }
  return model;
}

// Deterministic fold assignment: seeded shuffle within each stratum, dealt
// round-robin through a global counter so fold sizes stay balanced.
std::vector<int> make_folds(const FeatureMatrix& features,
                            const RegressorSpec& spec, std::size_t n) {
  std::map<long, std::vector<std::size_t>> strata;
  if (spec.stratify_by && features.has_block(*spec.stratify_by)) {
    const auto [off, width] = features.block_span(*spec.stratify_by);
    for (std::size_t i = 0; i < n; ++i) {
      long label = -1;
      for (std::size_t j = 0; j < width; ++j) {
        if (features.X(static_cast<Eigen::Index>(i),
                       static_cast<Eigen::Index>(off + j)) == 1.0) {
          label = static_cast<long>(j);
          break;
        }
      }
      strata[label].push_back(i);
    }
  } else {
    auto& all = strata[0];
    for (std::size_t i = 0; i < n; ++i) all.push_back(i);
  }
  Rng rng = Rng::derive(spec.seed, 0x464f4c44ULL);
  std::vector<int> fold(n, 0);
  std::size_t counter = 0;
  for (auto& [label, idx] : strata) {
    rng.shuffle(idx);
    for (std::size_t i : idx) {
      fold[i] = static_cast<int>(counter % static_cast<std::size_t>(spec.cv_folds));
      ++counter;
    }
  }
  return fold;
}

}  // namespace

RegressionModel fit(const FeatureMatrix& features,
                    std::span<const double> targets,
                    std::span<const double> weights,
                    const RegressorSpec& spec) {
  const std::size_t n = features.rows();
  if (targets.size() != n) {
    throw ArgumentError("fit: targets/rows size mismatch");
  }
  if (weights.size() != n) {
    throw ArgumentError("fit: weights/rows size mismatch");
  }
  for (double t : targets) {
    if (!std::isfinite(t)) throw DomainError("fit: non-finite target");
  }
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw ArgumentError("fit: weights must be strictly positive");
    }
  }
  if (spec.cv_folds < 2) throw ArgumentError("fit: cv_folds must be >= 2");
  if (n < static_cast<std::size_t>(spec.cv_folds)) {
    throw ArgumentError("fit: fewer rows than cross-validation folds");
  }
  const bool stump_family = spec.family == RegressorFamily::BoostedStumps;
  const std::vector<double>& lgrid = spec.lambda_grid;
  const std::vector<int>& tgrid = spec.tree_grid;
  const std::size_t grid_size = stump_family ? tgrid.size() : lgrid.size();
  if (grid_size == 0) throw ArgumentError("fit: empty hyperparameter grid");

  Eigen::VectorXd y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    y(static_cast<Eigen::Index>(i)) = targets[i];
    w(static_cast<Eigen::Index>(i)) = weights[i];
  }
  // Normalize weights to mean one: equal weights then match the unweighted
  // fit at the same lambda.
  w *= static_cast<double>(n) / w.sum();

  std::size_t chosen = 0;
  if (grid_size > 1) {
    const std::vector<int> fold = make_folds(features, spec, n);
    std::vector<double> cv_err(grid_size, 0.0);
    for (int f = 0; f < spec.cv_folds; ++f) {
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t i = 0; i < n; ++i) {
        (fold[i] == f ? test_idx : train_idx).push_back(i);
      }
      if (train_idx.empty() || test_idx.empty()) continue;
      Eigen::MatrixXd Xtr(train_idx.size(), features.X.cols());
      Eigen::VectorXd ytr(train_idx.size()), wtr(train_idx.size());
      for (std::size_t i = 0; i < train_idx.size(); ++i) {
        Xtr.row(static_cast<Eigen::Index>(i)) =
            features.X.row(static_cast<Eigen::Index>(train_idx[i]));
        ytr(static_cast<Eigen::Index>(i)) =
            y(static_cast<Eigen::Index>(train_idx[i]));
        wtr(static_cast<Eigen::Index>(i)) =
            w(static_cast<Eigen::Index>(train_idx[i]));
      }
      Eigen::MatrixXd Xte(test_idx.size(), features.X.cols());
      for (std::size_t i = 0; i < test_idx.size(); ++i) {
        Xte.row(static_cast<Eigen::Index>(i)) =
            features.X.row(static_cast<Eigen::Index>(test_idx[i]));
      }
      for (std::size_t h = 0; h < grid_size; ++h) {
        RegressionModel m = fit_with_hyper(
            Xtr, ytr, wtr, features.schema, spec,
            stump_family ? 0.0 : lgrid[h], stump_family ? tgrid[h] : 0);
        const Standardizer s{m.feat_mean, m.feat_scale};
        const Eigen::VectorXd pred = predict_matrix(m, s.apply(Xte));
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
          const double e = pred(static_cast<Eigen::Index>(i)) -
                           y(static_cast<Eigen::Index>(test_idx[i]));
          cv_err[h] += w(static_cast<Eigen::Index>(test_idx[i])) * e * e;
        }
      }
    }
    chosen = static_cast<std::size_t>(
        std::min_element(cv_err.begin(), cv_err.end()) - cv_err.begin());
  }

  return fit_with_hyper(features.X, y, w, features.schema, spec,
                        stump_family ? 0.0 : lgrid[chosen],
                        stump_family ? tgrid[chosen] : 0);
}

std::vector<double> predict(const RegressionModel& model,
                            const FeatureMatrix& features) {
  if (!schema_equal(model.schema, features.schema)) {
    throw SchemaError("predict: feature schema does not match the model");
  }
  const Standardizer s{model.feat_mean, model.feat_scale};
  const Eigen::VectorXd out = predict_matrix(model, s.apply(features.X));
  return std::vector<double>(out.data(), out.data() + out.size());
}

std::string dump_model(const RegressionModel& model) {
  json j;
  j["family"] = regressor_family_name(model.family);
  j["intercept"] = model.intercept;
  j["coefficients"] = std::vector<double>(
      model.coefficients.data(),
      model.coefficients.data() + model.coefficients.size());
  j["stump_init"] = model.stump_init;
  json stumps = json::array();
  for (const auto& s : model.stumps) {
    stumps.push_back({{"feature", s.feature},
                      {"threshold", s.threshold},
                      {"left", s.left},
                      {"right", s.right}});
  }
  j["stumps"] = stumps;
  j["chosen_lambda"] = model.chosen_lambda;
  j["chosen_trees"] = model.chosen_trees;
  json schema = json::array();
  for (const auto& b : model.schema) {
    schema.push_back(
        {{"name", b.name}, {"width", b.width}, {"continuous", b.continuous}});
  }
  j["schema"] = schema;
  j["feat_mean"] = std::vector<double>(
      model.feat_mean.data(), model.feat_mean.data() + model.feat_mean.size());
  j["feat_scale"] =
      std::vector<double>(model.feat_scale.data(),
                          model.feat_scale.data() + model.feat_scale.size());
  return j.dump(2);
}

RegressionModel load_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("load_model: invalid JSON: ") + e.what());
  }
  RegressionModel m;
  try {
    m.family = regressor_family_from_name(j.at("family").get<std::string>());
    m.intercept = j.at("intercept").get<double>();
    const auto coef = j.at("coefficients").get<std::vector<double>>();
    m.coefficients = Eigen::Map<const Eigen::VectorXd>(
        coef.data(), static_cast<Eigen::Index>(coef.size()));
    m.stump_init = j.at("stump_init").get<double>();
    for (const auto& s : j.at("stumps")) {
      m.stumps.push_back(Stump{s.at("feature").get<int>(),
                               s.at("threshold").get<double>(),
                               s.at("left").get<double>(),
                               s.at("right").get<double>()});
    }
    m.chosen_lambda = j.at("chosen_lambda").get<double>();
    m.chosen_trees = j.at("chosen_trees").get<int>();
    for (const auto& b : j.at("schema")) {
      m.schema.push_back(FeatureBlock{b.at("name").get<std::string>(),
                                      b.at("width").get<std::size_t>(),
                                      b.at("continuous").get<bool>()});
    }
    const auto fm = j.at("feat_mean").get<std::vector<double>>();
    const auto fs = j.at("feat_scale").get<std::vector<double>>();
    m.feat_mean = Eigen::Map<const Eigen::VectorXd>(
        fm.data(), static_cast<Eigen::Index>(fm.size()));
    m.feat_scale = Eigen::Map<const Eigen::VectorXd>(
        fs.data(), static_cast<Eigen::Index>(fs.size()));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("load_model: missing or mistyped field: ") +
                      e.what());
  }
  return m;
}

}  // namespace ebench
