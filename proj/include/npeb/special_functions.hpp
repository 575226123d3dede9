#pragma once

#include <span>
#include <vector>

namespace npeb {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSqrtPi = 1.77245385090551602730;  // Gamma(1/2)
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double x);
double normal_log_pdf(double x, double mean, double variance);

/// Inverse standard normal CDF. Rational initial approximation followed by
/// one Halley step against erfc; accurate to a few ulps on (0, 1).
double normal_quantile(double p);

double gamma_log_pdf(double x, double shape, double scale);

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// directly so the far upper tail keeps its relative precision.
double regularized_gamma_q(double a, double x);

/// Quantile of Gamma(shape, scale) at lower-tail probability p.
double gamma_quantile(double p, double shape, double scale);
/// Quantile of Gamma(shape, scale) at upper-tail probability q, i.e. the x
/// with Q(shape, x / scale) = q.
double gamma_quantile_upper(double q, double shape, double scale);

/// F^{-1}_{Gamma}(Phi(z)) evaluated without forming Phi(z) for large |z|.
double gamma_quantile_of_normal(double z, double shape, double scale);

/// Nodes and weights of the n-point Gauss-Hermite rule for the standard
/// normal measure: E[f(Z)] ~= sum_i weights[i] * f(nodes[i]). Weights sum to 1.
struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

HermiteRule gauss_hermite_rule(int n);

/// log(sum exp(v)); -inf for an empty span or all -inf entries.
double log_sum_exp(std::span<const double> v);

}  // namespace npeb
