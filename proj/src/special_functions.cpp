#include "npeb/special_functions.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "npeb/errors.hpp"

namespace npeb {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kTiny = 1e-300;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Series for P(a, x); converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < 10000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a, x) (modified Lentz); used for x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

void check_shape(double a, double x) {
  if (!(a > 0.0) || std::isnan(x)) {
    throw Error(ErrorCode::InvalidArgument, "incomplete gamma needs a > 0 and a numeric x");
  }
}

// Solves P(a, x) = target (upper == false) or Q(a, x) = target (upper == true)
// for unit scale. Newton on log F with a maintained bracket; bisection
// whenever Newton leaves the bracket.
double solve_gamma_quantile(double a, double target, bool upper) {
  const double z = upper ? -normal_quantile(target) : normal_quantile(target);
  double x = a * std::pow(1.0 - 1.0 / (9.0 * a) + z / (3.0 * std::sqrt(a)), 3);
  if (!(x > 0.0) || !std::isfinite(x)) {
    // small-x behaviour P(a, x) ~ x^a / Gamma(a + 1)
    const double p = upper ? 1.0 - target : target;
    x = std::exp((std::log(std::max(p, kTiny)) + std::lgamma(a + 1.0)) / a);
    if (!(x > 0.0)) x = kTiny;
  }
  double lo = 0.0;
  double hi = kInf;
  const double log_target = std::log(target);
  for (int iter = 0; iter < 300; ++iter) {
    const double f = upper ? regularized_gamma_q(a, x) : regularized_gamma_p(a, x);
    if (f == target) return x;
    const bool too_big = upper ? (f < target) : (f > target);
    if (too_big) {
      hi = x;
    } else {
      lo = x;
    }
    double next;
    const double dens = std::exp(gamma_log_pdf(x, a, 1.0));
    if (f > 0.0 && dens > 0.0) {
      const double dlog = (upper ? -dens : dens) / f;
      next = x - (std::log(f) - log_target) / dlog;
    } else {
      next = std::numeric_limits<double>::quiet_NaN();
    }
    if (!(next > lo && next < hi)) {
      next = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * std::max(x, 1.0);
    }
    if (std::fabs(next - x) <= 4.0 * kEps * next) return next;
    x = next;
  }
  return x;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_log_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(variance) - 0.5 * d * d / variance;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw Error(ErrorCode::InvalidArgument, "normal_quantile: p must lie in [0, 1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double gamma_log_pdf(double x, double shape, double scale) {
  if (!(x > 0.0)) return -kInf;
  return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
}

double regularized_gamma_p(double a, double x) {
  check_shape(a, x);
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_continued_fraction(a, x);
}

double regularized_gamma_q(double a, double x) {
  check_shape(a, x);
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_continued_fraction(a, x);
}

double gamma_quantile(double p, double shape, double scale) {
  if (!(shape > 0.0 && scale > 0.0) || !(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "gamma_quantile: need shape, scale > 0 and p in [0, 1]");
  }
  if (p == 0.0) return 0.0;
  if (p == 1.0) return kInf;
  if (p > 0.5) return scale * solve_gamma_quantile(shape, 1.0 - p, true);
  return scale * solve_gamma_quantile(shape, p, false);
}

double gamma_quantile_upper(double q, double shape, double scale) {
  if (!(shape > 0.0 && scale > 0.0) || !(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "gamma_quantile_upper: need shape, scale > 0 and q in [0, 1]");
  }
  if (q == 0.0) return kInf;
  if (q == 1.0) return 0.0;
  if (q > 0.5) return scale * solve_gamma_quantile(shape, 1.0 - q, false);
  return scale * solve_gamma_quantile(shape, q, true);
}

double gamma_quantile_of_normal(double z, double shape, double scale) {
  if (z <= 0.0) return gamma_quantile(normal_cdf(z), shape, scale);
  return gamma_quantile_upper(normal_cdf(-z), shape, scale);
}

HermiteRule gauss_hermite_rule(int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "gauss_hermite_rule: n must be positive");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int i = 1; i < n; ++i) sub(i - 1) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);

  HermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
    total += rule.weights[i];
  }
  // symmetrize; the eigen solver leaves ~1e-15 asymmetry
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = w;
    rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  for (double& w : rule.weights) w /= total;
  return rule;
}

double log_sum_exp(std::span<const double> v) {
  double m = -kInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace npeb
