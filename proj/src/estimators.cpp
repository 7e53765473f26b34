#include "ebench/estimators.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "ebench/error.hpp"
#include "ebench/rng.hpp"

namespace ebench {

std::string method_name(Method m) {
  switch (m) {
    case Method::DT:
      return "DT";
    case Method::SR:
      return "SR";
    case Method::EB:
      return "EB";
    case Method::JS:
      return "JS";
    case Method::StructReg:
      return "StructReg";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  if (lower == "dt") return Method::DT;
  if (lower == "sr") return Method::SR;
  if (lower == "eb") return Method::EB;
  if (lower == "js") return Method::JS;
  if (lower == "streg" || lower == "structreg") return Method::StructReg;
  throw ArgumentError("unknown method: " + name);
}

std::vector<GroupInput> make_group_inputs(std::span<const SubgroupData> units,
                                          MetricKind kind) {
  const auto summaries = summarize_groups(units, kind);
  std::vector<GroupInput> out;
  out.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    GroupInput g;
    g.group_key = units[i].group_key;
    g.model_id = unit_model(units[i]);
    g.task_id = unit_task(units[i]);
    g.summary = summaries[i];
    out.push_back(std::move(g));
  }
  return out;
}

double direct(const MetricSummary& summary) { return summary.Z; }

double estimate_A(std::span<const double> residuals,
                  std::span<const double> variances) {
  if (residuals.empty() || residuals.size() != variances.size()) {
    throw ArgumentError("estimate_A: bad input lengths");
  }
  double sum = 0.0;
  for (std::size_t g = 0; g < residuals.size(); ++g) {
    sum += residuals[g] * residuals[g] - variances[g];
  }
  return std::max(0.0, sum / static_cast<double>(residuals.size()));
}

double eb_combine(double Z, double f_hat, double sigma2, double A_hat) {
  if (sigma2 < 0.0 || A_hat < 0.0) {
    throw ArgumentError("eb_combine: negative variance component");
  }
  if (sigma2 == 0.0 && A_hat == 0.0) {
    throw DomainError("eb_combine: sigma2 and A_hat both zero");
  }
  const double w = A_hat / (sigma2 + A_hat);
  return f_hat + w * (Z - f_hat);
}

namespace {

double clamp_estimate(double value, MetricKind kind) {
  if (metric_is_bounded(kind)) return std::clamp(value, 0.0, 1.0);
  return value;
}

EstimateRow base_row(const GroupInput& g) {
  EstimateRow row;
  row.group_key = g.group_key;
  row.model_id = g.model_id;
  row.task_id = g.task_id;
  row.n = g.summary.n;
  row.Z = g.summary.Z;
  row.sigma2_hat = g.summary.var_hat;
  return row;
}

void sort_rows(EstimateTable& table) {
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const EstimateRow& a, const EstimateRow& b) {
                     if (a.group_key != b.group_key) {
                       return a.group_key < b.group_key;
                     }
                     return a.model_id < b.model_id;
                   });
}

// Balanced two-fold split, stratified by model so every model appears in
// both folds whenever it has at least two subgroups.
std::vector<int> split_two_folds(std::span<const GroupInput> inputs,
                                 std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    strata[inputs[i].model_id].push_back(i);
  }
  Rng rng = Rng::derive(seed, 0x4542ULL);
  std::vector<int> fold(inputs.size(), 0);
  std::array<std::size_t, 2> counts{0, 0};
  for (auto& [model, idx] : strata) {
    rng.shuffle(idx);
    for (std::size_t i : idx) {
      const int f = counts[0] <= counts[1] ? 0 : 1;
      fold[i] = f;
      ++counts[f];
    }
  }
  return fold;
}

FeatureMatrix select_rows(const FeatureMatrix& features,
                          std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.schema = features.schema;
  out.X = Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()),
                          features.X.cols());
  out.group_keys.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) =
        features.X.row(static_cast<Eigen::Index>(rows[i]));
    out.group_keys.push_back(features.group_keys[rows[i]]);
  }
  return out;
}

}  // namespace

EstimateTable direct_table(std::span<const GroupInput> inputs) {
  EstimateTable table;
  table.method = Method::DT;
  for (const auto& g : inputs) {
    EstimateRow row = base_row(g);
    row.estimate = direct(g.summary);
    table.rows.push_back(std::move(row));
  }
  sort_rows(table);
  return table;
}

EbResult eb_cross_fit(std::span<const GroupInput> inputs,
                      const FeatureMatrix& features, const RegressorSpec& spec,
                      std::uint64_t seed, PoolScope pool_scope) {
  const std::size_t n = inputs.size();
  if (n < 4) {
    throw DomainError("eb_cross_fit: needs at least 4 subgroups");
  }
  if (features.rows() != n) {
    throw ArgumentError("eb_cross_fit: features/inputs size mismatch");
  }
  const std::vector<int> fold = split_two_folds(inputs, seed);

  EbResult result;
  result.table.method = Method::EB;
  result.table.seed = seed;
  result.table.rows.resize(n);

  for (int held = 0; held < 2; ++held) {
    std::vector<std::size_t> train_rows, held_rows;
    for (std::size_t i = 0; i < n; ++i) {
      (fold[i] == held ? held_rows : train_rows).push_back(i);
    }
    if (train_rows.empty() || held_rows.empty()) {
      throw ArgumentError("eb_cross_fit: a fold is empty");
    }
    const FeatureMatrix train_X = select_rows(features, train_rows);
    const FeatureMatrix held_X = select_rows(features, held_rows);
    std::vector<double> train_y(train_rows.size());
    std::vector<double> train_w(train_rows.size(), 1.0);
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      train_y[i] = inputs[train_rows[i]].summary.Z;
    }
    RegressorSpec fold_spec = spec;
    fold_spec.seed = splitmix64(seed ^ (0x9E37ULL + held));
    const RegressionModel model = fit(train_X, train_y, train_w, fold_spec);
    const std::vector<double> f_hat = predict(model, held_X);

    // Pool residuals for A_hat either across the whole fold or per model.
    std::map<std::string, std::vector<std::size_t>> scopes;  // local indices
    for (std::size_t j = 0; j < held_rows.size(); ++j) {
      const std::string key = pool_scope == PoolScope::All
                                  ? std::string("all")
                                  : inputs[held_rows[j]].model_id;
      scopes[key].push_back(j);
    }
    for (const auto& [scope_key, local] : scopes) {
      std::vector<double> eps(local.size()), sig2(local.size());
      for (std::size_t j = 0; j < local.size(); ++j) {
        const auto& g = inputs[held_rows[local[j]]];
        eps[j] = g.summary.Z - f_hat[local[j]];
        sig2[j] = g.summary.var_hat;
      }
      const double A = estimate_A(eps, sig2);
      ShrinkageFit fitrec;
      fitrec.fold_id = held;
      fitrec.scope = scope_key;
      fitrec.A_hat = A;
      if (A > 0.0) fitrec.kappa_hat = kappa_hat(eps, sig2, A);
      for (std::size_t j = 0; j < local.size(); ++j) {
        const std::size_t gi = held_rows[local[j]];
        const auto& g = inputs[gi];
        const double w = A / (g.summary.var_hat + A);
        const double est =
            eb_combine(g.summary.Z, f_hat[local[j]], g.summary.var_hat, A);
        EstimateRow row = base_row(g);
        row.f_hat = f_hat[local[j]];
        row.A_hat = A;
        row.weight = w;
        row.estimate = clamp_estimate(est, g.summary.metric_kind);
        result.table.rows[gi] = std::move(row);
        fitrec.group_indices.push_back(gi);
        fitrec.prior_means.push_back(f_hat[local[j]]);
        fitrec.weights.push_back(w);
        fitrec.residuals.push_back(eps[j]);
      }
      result.fits.push_back(std::move(fitrec));
    }
  }
  sort_rows(result.table);
  return result;
}

EbResult james_stein(std::span<const GroupInput> inputs, int min_groups) {
  const std::size_t n = inputs.size();
  if (n < static_cast<std::size_t>(min_groups)) {
    throw DomainError("james_stein: needs at least " +
                      std::to_string(min_groups) + " subgroups");
  }
  double num = 0.0, den = 0.0;
  for (const auto& g : inputs) {
    if (!(g.summary.var_hat > 0.0)) {
      throw DomainError("james_stein: nonpositive variance for subgroup '" +
                        g.group_key + "'");
    }
    num += g.summary.Z / g.summary.var_hat;
    den += 1.0 / g.summary.var_hat;
  }
  const double grand_mean = num / den;

  std::vector<double> eps(n), sig2(n);
  for (std::size_t i = 0; i < n; ++i) {
    eps[i] = inputs[i].summary.Z - grand_mean;
    sig2[i] = inputs[i].summary.var_hat;
  }
  const double A = estimate_A(eps, sig2);

  EbResult result;
  result.table.method = Method::JS;
  ShrinkageFit fitrec;
  fitrec.fold_id = -1;
  fitrec.A_hat = A;
  if (A > 0.0) fitrec.kappa_hat = kappa_hat(eps, sig2, A);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = inputs[i];
    const double w = A / (g.summary.var_hat + A);
    EstimateRow row = base_row(g);
    row.f_hat = grand_mean;
    row.A_hat = A;
    row.weight = w;
    row.estimate = clamp_estimate(
        eb_combine(g.summary.Z, grand_mean, g.summary.var_hat, A),
        g.summary.metric_kind);
    result.table.rows.push_back(std::move(row));
    fitrec.group_indices.push_back(i);
    fitrec.prior_means.push_back(grand_mean);
    fitrec.weights.push_back(w);
    fitrec.residuals.push_back(eps[i]);
  }
  result.fits.push_back(std::move(fitrec));
  sort_rows(result.table);
  return result;
}

EstimateTable sr_table(std::span<const GroupInput> inputs,
                       const FeatureMatrix& features, const RegressorSpec& spec,
                       std::uint64_t seed) {
  const std::size_t n = inputs.size();
  if (n < 2) throw DomainError("sr_table: needs at least 2 subgroups");
  if (features.rows() != n) {
    throw ArgumentError("sr_table: features/inputs size mismatch");
  }
  std::vector<double> y(n), w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) y[i] = inputs[i].summary.Z;
  RegressorSpec s = spec;
  s.seed = splitmix64(seed ^ 0x5352ULL);
  const RegressionModel model = fit(features, y, w, s);
  const std::vector<double> f_hat = predict(model, features);
  EstimateTable table;
  table.method = Method::SR;
  table.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    EstimateRow row = base_row(inputs[i]);
    row.f_hat = f_hat[i];
    row.estimate = clamp_estimate(f_hat[i], inputs[i].summary.metric_kind);
    table.rows.push_back(std::move(row));
  }
  sort_rows(table);
  return table;
}

EstimateTable structured_regression(std::span<const GroupInput> inputs,
                                    const FeatureMatrix& features,
                                    std::span<const double> lambda_grid,
                                    std::uint64_t seed) {
  const std::size_t n = inputs.size();
  if (n < 2) {
    throw DomainError("structured_regression: needs at least 2 subgroups");
  }
  if (features.rows() != n) {
    throw ArgumentError("structured_regression: features/inputs size mismatch");
  }
  if (!features.has_block("unit")) {
    throw ArgumentError(
        "structured_regression: features lack the per-unit intercept block "
        "(enable FeatureConfig::unit_intercept)");
  }
  if (lambda_grid.empty()) {
    throw ArgumentError("structured_regression: empty lambda grid");
  }
  std::vector<double> y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = inputs[i].summary.Z;
    if (!(inputs[i].summary.var_hat > 0.0)) {
      throw DomainError("structured_regression: nonpositive variance for '" +
                        inputs[i].group_key + "'");
    }
    w[i] = 1.0 / inputs[i].summary.var_hat;
  }
  RegressorSpec spec;
  spec.family = RegressorFamily::WeightedLasso;
  spec.lambda_grid.assign(lambda_grid.begin(), lambda_grid.end());
  spec.cv_folds = 2;
  spec.stratify_by = features.has_block("task") ? std::optional<std::string>(
                                                      "task")
                                                : std::nullopt;
  spec.seed = splitmix64(seed ^ 0x5354ULL);
  const RegressionModel model = fit(features, y, w, spec);
  const std::vector<double> fitted = predict(model, features);
  EstimateTable table;
  table.method = Method::StructReg;
  table.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    EstimateRow row = base_row(inputs[i]);
    row.f_hat = fitted[i];
    row.estimate = clamp_estimate(fitted[i], inputs[i].summary.metric_kind);
    table.rows.push_back(std::move(row));
  }
  sort_rows(table);
  return table;
}

void attach_dt_intervals(EstimateTable& table,
                         std::span<const GroupInput> inputs, double alpha) {
  std::map<std::pair<std::string, std::string>, const GroupInput*> lookup;
  for (const auto& g : inputs) lookup[{g.group_key, g.model_id}] = &g;
  for (auto& row : table.rows) {
    const auto it = lookup.find({row.group_key, row.model_id});
    if (it == lookup.end()) continue;
    const GroupInput& g = *it->second;
    ConfidenceInterval ci =
        dt_interval_from_summary(g.summary, alpha, g.var_known);
    if (metric_is_bounded(g.summary.metric_kind)) {
      ci = clamp_interval(ci, 0.0, 1.0);
    }
    row.ci = ci;
  }
}

void attach_robust_intervals(EstimateTable& table,
                             std::span<const GroupInput> inputs,
                             std::span<const ShrinkageFit> fits, double alpha,
                             bool use_kappa_constraint) {
  // Map each input row to its fold's (A_hat, kappa_hat).
  std::vector<const ShrinkageFit*> by_group(inputs.size(), nullptr);
  for (const auto& f : fits) {
    for (std::size_t gi : f.group_indices) by_group[gi] = &f;
  }
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    index[{inputs[i].group_key, inputs[i].model_id}] = i;
  }
  for (auto& row : table.rows) {
    const auto it = index.find({row.group_key, row.model_id});
    if (it == index.end()) continue;
    const std::size_t gi = it->second;
    const ShrinkageFit* f = by_group[gi];
    if (!f) continue;
    std::optional<double> kappa;
    if (std::isfinite(f->kappa_hat)) kappa = f->kappa_hat;
    ConfidenceInterval ci =
        robust_eb_interval(row.estimate, inputs[gi].summary.var_hat, f->A_hat,
                           kappa, alpha, use_kappa_constraint);
    if (metric_is_bounded(inputs[gi].summary.metric_kind)) {
      ci = clamp_interval(ci, 0.0, 1.0);
    }
    row.ci = ci;
  }
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "";
}

}  // namespace

std::string estimate_table_csv_header() {
  return "group_key,model_id,task_id,n,Z,sigma2_hat,f_hat,A_hat,weight,"
         "estimate,ci_lo,ci_hi,method,seed";
}

std::string estimate_table_to_csv(const EstimateTable& table,
                                  bool with_header) {
  std::ostringstream out;
  if (with_header) out << estimate_table_csv_header() << "\n";
  for (const auto& row : table.rows) {
    out << csv_escape(row.group_key) << ',' << csv_escape(row.model_id) << ','
        << csv_escape(row.task_id) << ',' << row.n << ',' << fmt_double(row.Z)
        << ',' << fmt_double(row.sigma2_hat) << ',' << fmt_opt(row.f_hat)
        << ',' << fmt_opt(row.A_hat) << ',' << fmt_opt(row.weight) << ','
        << fmt_double(row.estimate) << ',';
    if (row.ci) {
      out << fmt_double(row.ci->lo) << ',' << fmt_double(row.ci->hi);
    } else {
      out << ',';
    }
    out << ',' << method_name(table.method) << ',' << table.seed << "\n";
  }
  return out.str();
}

}  // namespace ebench
