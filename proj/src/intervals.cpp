#include "ebench/intervals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

#include "ebench/distributions.hpp"
#include "ebench/error.hpp"

namespace ebench {

ConfidenceInterval clamp_interval(ConfidenceInterval ci, double lo,
                                  double hi) {
  ci.lo = std::clamp(ci.lo, lo, hi);
  ci.hi = std::clamp(ci.hi, lo, hi);
  return ci;
}

ConfidenceInterval wilson_interval(long k, long n, double alpha) {
  if (n < 1) throw ArgumentError("wilson_interval: n must be >= 1");
  if (k < 0 || k > n) throw ArgumentError("wilson_interval: k outside [0,n]");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ArgumentError("wilson_interval: alpha outside (0,1)");
  }
  const double z = normal_quantile(1.0 - 0.5 * alpha);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2n = z * z / nn;
  const double center = (p + 0.5 * z2n) / (1.0 + z2n);
  const double half = z / (1.0 + z2n) *
                      std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn));
  ConfidenceInterval ci;
  ci.kind = IntervalKind::Wilson;
  ci.level = 1.0 - alpha;
  ci.lo = (k == 0) ? 0.0 : std::max(0.0, center - half);
  ci.hi = (k == n) ? 1.0 : std::min(1.0, center + half);
  return ci;
}

ConfidenceInterval t_interval(std::span<const double> values, double alpha) {
  if (values.empty()) throw ArgumentError("t_interval: no values");
  if (values.size() == 1) {
    throw DomainError(
        "t_interval: a single value has no spread estimate; use the pooled "
        "fallback via dt_interval_from_summary");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ArgumentError("t_interval: alpha outside (0,1)");
  }
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  const double t = t_quantile(1.0 - 0.5 * alpha, n - 1.0);
  ConfidenceInterval ci;
  ci.kind = IntervalKind::StudentT;
  ci.level = 1.0 - alpha;
  ci.lo = mean - t * se;
  ci.hi = mean + t * se;
  return ci;
}

ConfidenceInterval dt_interval_from_summary(const MetricSummary& summary,
                                            double alpha, bool var_known) {
  if (summary.metric_kind == MetricKind::BinaryAccuracy) {
    if (!summary.success_count) {
      throw ArgumentError("dt interval: binary summary lacks success_count");
    }
    return wilson_interval(*summary.success_count, summary.n, alpha);
  }
  const double se = std::sqrt(summary.var_hat);
  ConfidenceInterval ci;
  ci.kind = IntervalKind::StudentT;
  ci.level = 1.0 - alpha;
  if (var_known || summary.var_pooled_fallback || summary.n < 2) {
    // No usable degrees of freedom: normal quantile, flagged.
    const double z = normal_quantile(1.0 - 0.5 * alpha);
    ci.lo = summary.Z - z * se;
    ci.hi = summary.Z + z * se;
    ci.flagged = !var_known;
    if (metric_is_bounded(summary.metric_kind)) {
      ci = clamp_interval(ci, 0.0, 1.0);
    }
    return ci;
  }
  const double t =
      t_quantile(1.0 - 0.5 * alpha, static_cast<double>(summary.n - 1));
  ci.lo = summary.Z - t * se;
  ci.hi = summary.Z + t * se;
  if (metric_is_bounded(summary.metric_kind)) ci = clamp_interval(ci, 0.0, 1.0);
  return ci;
}

double kappa_hat(std::span<const double> residuals,
                 std::span<const double> variances, double A_hat) {
  if (residuals.empty() || residuals.size() != variances.size()) {
    throw ArgumentError("kappa_hat: bad input lengths");
  }
  if (!(A_hat > 0.0)) {
    throw DomainError("kappa_hat: undefined when A_hat is zero");
  }
  double sum = 0.0;
  for (std::size_t g = 0; g < residuals.size(); ++g) {
    const double e2 = residuals[g] * residuals[g];
    const double s2 = variances[g];
    sum += e2 * e2 - 6.0 * s2 * e2 + 3.0 * s2 * s2;
  }
  const double kappa =
      sum / static_cast<double>(residuals.size()) / (A_hat * A_hat);
  return std::max(1.0, kappa);
}

namespace {

// P(|N(b,1)| > c).
double exceed_prob(double b, double c) {
  return normal_cdf(b - c) + normal_cdf(-b - c);
}

struct InnerMax {
  double value = 0.0;
  double t = 0.0;
};

// sup over t >= sqrt(m2) of the exceedance of the two-point distribution
// with mass m2/t^2 at t and the rest at 0. Dense grid then golden-section
// refinement around the best grid point. For t below c-9 the objective is
// within Phi(-9) of the zero-bias exceedance, so the grid only needs the
// window around c; the lower boundary is evaluated explicitly.
InnerMax worst_exceedance(double m2, double c, double grid_step) {
  const double r0 = exceed_prob(0.0, c);
  if (m2 <= 0.0) return {r0, 0.0};
  const double t_lo = std::sqrt(m2);
  const double t_hi = std::max(t_lo + 1.0, c + 6.0);
  const double t_win = std::max(t_lo, c - 9.0);
  auto h = [&](double t) {
    const double q = m2 / (t * t);
    return q * exceed_prob(t, c) + (1.0 - q) * r0;
  };
  InnerMax best{h(t_lo), t_lo};
  for (double t = t_win; t < t_hi; t += grid_step) {
    const double v = h(t);
    if (v > best.value) best = {v, t};
  }
  // Golden-section refinement on the bracketing interval.
  constexpr double kInvPhi = 0.6180339887498949;
  double a = std::max(t_lo, best.t - grid_step);
  double b = std::min(t_hi, best.t + grid_step);
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = h(x1), f2 = h(x2);
  for (int it = 0; it < 60 && b - a > 1e-10; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = h(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = h(x1);
    }
  }
  const double tm = 0.5 * (a + b);
  const double fm = h(tm);
  if (fm > best.value) best = {fm, tm};
  return best;
}

// Three-point program for the kappa-constrained case: support {0, t1, t2}
// with both moment constraints active. Returns the worst-case exceedance.
double worst_exceedance_kappa(double m2, double kappa, double c) {
  const double r0 = exceed_prob(0.0, c);
  if (m2 <= 0.0) return r0;
  const double km2 = kappa * m2;
  const double t_edge = std::sqrt(km2);
  double best = 0.0;
  // Family A: two points {0, t2} with the second moment binding; the fourth
  // moment stays feasible while t2^2 <= kappa*m2.
  {
    const double lo = std::sqrt(m2);
    const double hi = t_edge;
    const int steps = 400;
    for (int i = 0; i <= steps; ++i) {
      const double t = lo + (hi - lo) * i / steps;
      const double q = m2 / (t * t);
      best = std::max(best, q * exceed_prob(t, c) + (1.0 - q) * r0);
    }
  }
  // Family B: three points {0, t1, t2} with both moments binding.
  const double t2_hi = std::max(t_edge + 1.0, c + 6.0);
  const int n1 = 160, n2 = 240;
  for (int i = 1; i <= n1; ++i) {
    const double t1 = t_edge * i / (n1 + 1);  // 0 < t1 < sqrt(kappa*m2)
    const double t1sq = t1 * t1;
    for (int j = 0; j <= n2; ++j) {
      const double t2 = t_edge + (t2_hi - t_edge) * j / n2;
      const double t2sq = t2 * t2;
      if (t2sq <= t1sq + 1e-12) continue;
      const double p1 = m2 * (t2sq - km2) / (t1sq * (t2sq - t1sq));
      const double p2 = m2 * (km2 - t1sq) / (t2sq * (t2sq - t1sq));
      if (p1 < 0.0 || p2 < 0.0 || p1 + p2 > 1.0) continue;
      const double v = (1.0 - p1 - p2) * r0 + p1 * exceed_prob(t1, c) +
                       p2 * exceed_prob(t2, c);
      best = std::max(best, v);
    }
  }
  return best;
}

double solve_cva_m2(double m2, double alpha, double z) {
  if (m2 <= 0.0) return z;
  double lo = z;
  double hi = z + std::sqrt(m2) + 4.0;
  // The standard bracket can fall short for very large m2 (the critical
  // value grows like sqrt(m2/alpha), not sqrt(m2)); widen it until the
  // worst-case exceedance drops below alpha.
  while (worst_exceedance(m2, hi, 0.01).value > alpha) {
    lo = hi;
    hi += std::sqrt(m2) + 4.0;
    if (hi > 1e7) throw Error("cva: bracket expansion failed");
  }
  for (int it = 0; it < 64 && hi - lo > 1e-8 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (worst_exceedance(m2, mid, 0.01).value > alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

double solve_cva_kappa(double m2, double kappa, double alpha, double z) {
  const double c_unconstrained = solve_cva_m2(m2, alpha, z);
  if (m2 <= 0.0) return z;
  // If the unconstrained least-favorable point already satisfies the fourth
  // moment bound, the constraint is slack.
  const InnerMax lf = worst_exceedance(m2, c_unconstrained, 0.01);
  if (lf.t * lf.t <= kappa * m2 + 1e-9) return c_unconstrained;
  double lo = z;
  double hi = c_unconstrained;
  if (worst_exceedance_kappa(m2, kappa, lo) <= alpha) return lo;
  for (int it = 0; it < 50 && hi - lo > 1e-7; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (worst_exceedance_kappa(m2, kappa, mid) > alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

std::mutex g_cva_mutex;
std::map<std::tuple<long long, long long, long long>, double> g_cva_memo;

long long memo_round(double x) {
  return static_cast<long long>(std::llround(x * 1e6));
}

}  // namespace

double cva_critical_value(const CriticalValueQuery& query) {
  if (!(query.alpha > 0.0 && query.alpha < 1.0)) {
    throw ArgumentError("cva: alpha outside (0,1)");
  }
  if (!(query.m2 >= 0.0 && query.m2 <= 1e12) || !std::isfinite(query.m2)) {
    throw ArgumentError("cva: m2 must be finite, nonnegative and <= 1e12");
  }
  if (query.kappa && !(*query.kappa >= 1.0 && *query.kappa <= 1e12)) {
    throw ArgumentError("cva: kappa must lie in [1, 1e12]");
  }
  const auto key = std::make_tuple(memo_round(query.m2),
                                   query.kappa ? memo_round(*query.kappa) : -1,
                                   memo_round(query.alpha));
  {
    std::lock_guard<std::mutex> lock(g_cva_mutex);
    auto it = g_cva_memo.find(key);
    if (it != g_cva_memo.end()) return it->second;
  }
  const double z = normal_quantile(1.0 - 0.5 * query.alpha);
  const double value =
      query.kappa ? solve_cva_kappa(query.m2, *query.kappa, query.alpha, z)
                  : solve_cva_m2(query.m2, query.alpha, z);
  {
    std::lock_guard<std::mutex> lock(g_cva_mutex);
    g_cva_memo.emplace(key, value);
  }
  return value;
}

ConfidenceInterval robust_eb_interval(double estimate, double sigma2,
                                      double A_hat,
                                      std::optional<double> kappa,
                                      double alpha,
                                      bool use_kappa_constraint) {
  if (!(sigma2 > 0.0)) {
    throw ArgumentError("robust_eb_interval: sigma2 must be positive");
  }
  ConfidenceInterval ci;
  ci.kind = IntervalKind::RobustEB;
  ci.level = 1.0 - alpha;
  if (A_hat <= 0.0) {
    // Full shrinkage to the prior mean: degenerate interval, flagged.
    ci.lo = ci.hi = estimate;
    ci.flagged = true;
    return ci;
  }
  CriticalValueQuery q;
  q.m2 = sigma2 / A_hat;
  q.alpha = alpha;
  if (q.m2 > 1e9) {
    // Shrinkage weight below 1e-9: the interval width is bounded by
    // sqrt(A_hat/(2*alpha)) < 1e-4 * sigma_hat, numerically negligible.
    ci.lo = ci.hi = estimate;
    ci.flagged = true;
    return ci;
  }
  if (use_kappa_constraint && kappa && *kappa < 1e9) {
    // Beyond 1e9 the fourth-moment bound is guaranteed slack; falling back
    // to the second-moment-only value is exact there (and conservative in
    // general).
    q.kappa = std::max(1.0, *kappa);
  }
  const double c = cva_critical_value(q);
  const double half = c * (A_hat / (sigma2 + A_hat)) * std::sqrt(sigma2);
  ci.lo = estimate - half;
  ci.hi = estimate + half;
  return ci;
}

}  // namespace ebench
