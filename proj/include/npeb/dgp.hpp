#pragma once

#include <string>

namespace npeb {

/// Gaussian-copula location/Gamma-variance prior:
///   (xi1, xi2) ~ N(0, [[1, rho], [rho, 1]])
///   mu      = alpha + sqrt(nu) * xi1
///   sigma^2 = F^{-1}_{Gamma(kappa, lambda)}(Phi(xi2))
struct DgpSpec {
  double alpha = 0.0;
  double nu = 1.0;
  double kappa = 1.0;
  double lambda = 1.0;
  double rho_copula = 0.0;

  void validate() const;
  std::string describe() const;
};

/// First five moments of (mu, sigma^2) used to calibrate a DgpSpec.
struct MomentTargets {
  double e_mu = 0.0;
  double v_mu = 0.018;
  double e_sigma2 = 0.26;
  double v_sigma2 = 0.0023;
  double cor_mu_sigma2 = -0.38;

  void validate() const;
};

}  // namespace npeb
