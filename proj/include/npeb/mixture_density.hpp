#pragma once

#include <span>
#include <vector>

#include "npeb/core_model.hpp"

namespace npeb {

/// One support point (mu, sigma) of a discrete mixing distribution.
struct MixtureAtom {
  double weight = 0.0;
  double mu = 0.0;
  double sigma = 1.0;

  /// Gamma scale of s^2 given sigma: sigma^2 / k.
  double theta(double k) const { return sigma * sigma / k; }
  /// Sampling variance of the unit mean: sigma^2 / J.
  double var_y(int j_count) const { return sigma * sigma / j_count; }
};

/// Discrete mixing distribution over (mu, sigma) paired with the sampling
/// design (J, k = (J - 1) / 2) at which its marginal density is evaluated.
/// Zero-weight atoms are dropped on construction; the remaining weights must
/// sum to one within 1e-10.
class DiscreteMixture {
 public:
  DiscreteMixture(std::vector<MixtureAtom> atoms, int j_count);

  const std::vector<MixtureAtom>& atoms() const { return atoms_; }
  int j_count() const { return j_count_; }
  double k() const { return 0.5 * (j_count_ - 1); }
  std::size_t size() const { return atoms_.size(); }

  /// Same atoms evaluated under a different J.
  DiscreteMixture with_j(int j_count) const;

 private:
  std::vector<MixtureAtom> atoms_;
  int j_count_;
};

/// log[ phi(y; mu, sigma^2 / J) * gamma(s2; k, sigma^2 / k) ], weight ignored.
double component_log_density(const MixtureAtom& atom, int j_count, double y, double s2);
double component_density(const MixtureAtom& atom, int j_count, double y, double s2);

double mixture_log_density(const DiscreteMixture& g, double y, double s2);
double mixture_density(const DiscreteMixture& g, double y, double s2);

/// Analytic d/dy of the mixture density.
double mixture_density_dy(const DiscreteMixture& g, double y, double s2);

/// Integrals over t in (s2, inf) of (s2 / t)^{k-1} gamma(t; k, theta)
/// (t0) and of (k (t - s2))^{-1/2} (s2 / t)^{k-1} gamma(t; k, theta) (thalf).
/// Both have closed forms in gamma(s2; k, theta):
///   t0    = theta * gamma(s2; k, theta)
///   thalf = sqrt(pi) * sqrt(theta / k) * gamma(s2; k, theta)
struct TailIntegrals {
  double t0 = 0.0;
  double thalf = 0.0;
};

TailIntegrals tail_integrals(const MixtureAtom& atom, int j_count, double s2);
/// Logarithms of the two tail integrals.
TailIntegrals log_tail_integrals(const MixtureAtom& atom, int j_count, double s2);

/// Sum over units of log f_G(y_i, s2_i), each unit evaluated at its own J.
/// Returns -inf if any unit has zero density.
double log_likelihood(const DiscreteMixture& g, std::span<const SufficientStats> stats);

}  // namespace npeb
