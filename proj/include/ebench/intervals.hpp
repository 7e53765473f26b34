#pragma once

#include <optional>
#include <span>

#include "ebench/metrics.hpp"

namespace ebench {

enum class IntervalKind { Wilson, StudentT, RobustEB };

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  IntervalKind kind = IntervalKind::Wilson;
  // Set when a fallback produced the interval (pooled-variance singleton,
  // known-variance normal, or a degenerate A_hat = 0 robust interval).
  bool flagged = false;
};

ConfidenceInterval clamp_interval(ConfidenceInterval ci, double lo, double hi);

// Wilson score interval for k successes out of n trials.
ConfidenceInterval wilson_interval(long k, long n, double alpha);

// mean +/- t_{1-alpha/2, n-1} * s / sqrt(n); requires n >= 2.
ConfidenceInterval t_interval(std::span<const double> values, double alpha);

// Direct-estimator interval from a summary: Wilson for binary metrics,
// Student-t otherwise. Singleton subgroups with the pooled-variance fallback
// (and summaries with var_known) use the normal quantile and are flagged.
ConfidenceInterval dt_interval_from_summary(const MetricSummary& summary,
                                            double alpha,
                                            bool var_known = false);

// Kurtosis-type moment of the prior residuals:
//   mean_g (eps^4 - 6 sigma2 eps^2 + 3 sigma2^2) / A_hat^2, floored at 1.
// Requires A_hat > 0.
double kappa_hat(std::span<const double> residuals,
                 std::span<const double> variances, double A_hat);

struct CriticalValueQuery {
  double m2 = 0.0;                  // sigma2_hat / A_hat ratio
  std::optional<double> kappa;      // unset = second-moment constraint only
  double alpha = 0.05;
};

// Smallest c with sup P(|N(b,1)| > c) <= alpha over all bias distributions
// with E[b^2] <= m2 (and E[b^4] <= kappa*m2^2 when kappa is set). Results
// are memoized on (m2, kappa, alpha) rounded to 1e-6.
double cva_critical_value(const CriticalValueQuery& query);

// estimate +/- cva(sigma2/A, kappa) * A/(sigma2+A) * sigma. A_hat = 0 gives
// a flagged zero-width interval at the estimate. The kappa constraint is
// only applied when use_kappa_constraint is set; the default second-moment
// value is valid for every fourth moment and therefore conservative.
ConfidenceInterval robust_eb_interval(double estimate, double sigma2,
                                      double A_hat,
                                      std::optional<double> kappa,
                                      double alpha,
                                      bool use_kappa_constraint = false);

}  // namespace ebench
