#pragma once

namespace ebench {

// Standard normal density, CDF and inverse CDF. The quantile uses a rational
// approximation refined by one Halley step; absolute error is ~1e-15 away
// from the extreme tails.
double normal_pdf(double x);
double normal_cdf(double x);
double normal_quantile(double p);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// Student-t CDF and quantile for df >= 1 (df may be non-integer).
double t_cdf(double t, double df);
double t_quantile(double p, double df);

}  // namespace ebench
