#pragma once

#include <span>
#include <variant>
#include <vector>

#include "npeb/core_model.hpp"
#include "npeb/dgp.hpp"
#include "npeb/mixture_density.hpp"
#include "npeb/posterior_estimators.hpp"

namespace npeb {

/// Posterior-mean target.
struct Target {
  enum class Kind { Mu, Sigma, Sigma2, Quantile };
  Kind kind = Kind::Mu;
  double alpha = 0.5;

  static Target mu() { return {Kind::Mu, 0.5}; }
  static Target sigma() { return {Kind::Sigma, 0.5}; }
  static Target sigma2() { return {Kind::Sigma2, 0.5}; }
  static Target quantile(double a) { return {Kind::Quantile, a}; }

  /// "mu", "sigma", "sigma2" or "q<100*alpha>", e.g. "q10".
  std::string name() const;
  double of(const UnitTruth& t) const;
  double of(const UnitEstimates& e) const;
};

struct OracleSpec {
  std::variant<DiscreteMixture, DgpSpec> prior;
  int nodes_mu = 40;
  int nodes_sigma = 40;
  int mc_check_draws = 0;
};

/// Posterior means E[mu | y, s], E[sigma | y, s], E[sigma^2 | y, s] under the
/// true copula prior, by tensor Gauss-Hermite quadrature over the whitened
/// latent normals (z1, z2): xi2 = z2, xi1 = rho z2 + sqrt(1 - rho^2) z1.
/// Node tables are built once; posterior() is const and thread-safe.
class CopulaOracle {
 public:
  CopulaOracle(const DgpSpec& spec, int nodes_mu = 40, int nodes_sigma = 40);

  /// Throws QuadratureUnderflow when every node has zero likelihood.
  PosteriorMoments posterior(double y, double s2, int j_count) const;

 private:
  struct Node {
    double log_weight;
    double mu;
    double sigma2;
    double sigma;
    double log_sigma2;
  };
  std::vector<Node> nodes_;
};

/// Exact posterior means under a discrete prior.
PosteriorMoments discrete_posterior(double y, double s2, const DiscreteMixture& g);

double oracle_posterior(const Target& target, double y, double s2, int j_count,
                        const OracleSpec& spec);

/// ORACLE rows for every unit of the dataset.
std::vector<UnitEstimates> oracle_estimates(std::span<const SufficientStats> stats,
                                            const OracleSpec& spec,
                                            std::span<const double> alpha_list, int threads = 1);

}  // namespace npeb
