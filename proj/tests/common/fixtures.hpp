#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "npeb/mixture_density.hpp"

namespace npeb::testing {

inline std::vector<MixtureAtom> random_atoms(std::mt19937_64& rng, int count) {
  std::uniform_real_distribution<double> mu(-1.0, 1.0);
  std::uniform_real_distribution<double> sigma(0.3, 1.2);
  std::uniform_real_distribution<double> w(0.05, 1.0);
  std::vector<MixtureAtom> atoms(count);
  double total = 0.0;
  for (auto& a : atoms) {
    a = {w(rng), mu(rng), sigma(rng)};
    total += a.weight;
  }
  for (auto& a : atoms) a.weight /= total;
  return atoms;
}

/// Posterior atom probabilities p_m proportional to w_m f_m(y, s2), from raw
/// textbook densities.
inline std::vector<double> brute_force_posterior(const std::vector<MixtureAtom>& atoms, int j,
                                                 double y, double s2) {
  const double k = 0.5 * (j - 1);
  std::vector<double> logp(atoms.size());
  double top = -INFINITY;
  for (std::size_t m = 0; m < atoms.size(); ++m) {
    const double var_y = atoms[m].sigma * atoms[m].sigma / j;
    const double theta = atoms[m].sigma * atoms[m].sigma / k;
    const double d = y - atoms[m].mu;
    const double log_norm = -0.5 * std::log(2 * M_PI * var_y) - d * d / (2 * var_y);
    const double log_gamma =
        (k - 1) * std::log(s2) - s2 / theta - std::lgamma(k) - k * std::log(theta);
    logp[m] = std::log(atoms[m].weight) + log_norm + log_gamma;
    top = std::max(top, logp[m]);
  }
  double total = 0.0;
  for (auto& v : logp) total += (v = std::exp(v - top));
  for (auto& v : logp) v /= total;
  return logp;
}

}  // namespace npeb::testing
