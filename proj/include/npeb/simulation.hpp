#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "npeb/core_model.hpp"
#include "npeb/dgp.hpp"
#include "npeb/npmle.hpp"
#include "npeb/oracle.hpp"
#include "npeb/posterior_estimators.hpp"
#include "npeb/risk_eval.hpp"

namespace npeb {

/// Independent random stream keyed by (seed, key...). Streams with different
/// keys are statistically independent; the same key always yields the same
/// sequence, whatever order streams are created in.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

  double normal() { return normal_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; used to derive stream and round seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Matches the five moments: lambda = V[s2] / E[s2], kappa = E[s2] / lambda,
/// and the copula correlation from cov(mu, sigma^2) = sqrt(nu) * rho *
/// E[xi F^{-1}(Phi(xi))]. Throws InfeasibleCorrelation if |rho| >= 1.
DgpSpec calibrate_dgp(const MomentTargets& targets);

/// E[xi * F^{-1}_{Gamma(kappa, lambda)}(Phi(xi))] for standard normal xi.
double gamma_copula_covariance_factor(double kappa, double lambda);

std::vector<UnitTruth> draw_parameters(const DgpSpec& spec, std::size_t n, std::uint64_t seed);

/// y_ij = mu_i + sigma_i * eps_ij. Units get ids "u0", "u1", ...
struct DrawnData {
  Dataset dataset;
  std::vector<UnitObservations> observations;
};

DrawnData draw_observations(const std::vector<UnitTruth>& truths, int j_count, std::uint64_t seed);

struct ExperimentSpec {
  std::variant<DgpSpec, MomentTargets> dgp = MomentTargets{};
  std::vector<std::size_t> n_list = {200};
  int j_count = 15;
  int rounds = 100;
  std::uint64_t seed = 20240101;
  std::vector<Method> methods = {Method::Het, Method::Hom, Method::Naive};
  std::vector<double> alphas = {0.1};
  /// Threshold grids for detection regrets on mu and on every q_alpha target.
  std::vector<double> detect_mu;
  std::vector<double> detect_q;
  SieveConfig sieve;
  EstimatorConfig estimator;
  int oracle_nodes = 40;
  int threads = 1;

  void validate() const;
  DgpSpec resolved_dgp() const;
  std::vector<Target> targets() const;
};

struct ExperimentDiagnostics {
  /// Smallest per-iteration log-likelihood change over every EM fit.
  double min_em_step = 0.0;
  std::size_t fits = 0;
  std::size_t unconverged_full_fits = 0;
  int max_full_iters = 0;
  int max_loo_iters = 0;
  std::size_t truncated_units = 0;
};

struct ExperimentResult {
  DgpSpec dgp;
  std::vector<RegretReport> mse;
  std::vector<RegretReport> detection;
  ExperimentDiagnostics diagnostics;

  const RegretReport* find_mse(std::size_t n, const std::string& target) const;
  const RegretReport* find_detection(std::size_t n, const std::string& target, double c) const;
};

/// Runs `rounds` independent replications per n; per round draws truths and
/// observations, runs the requested methods and the oracle, and records MSE and
/// detection losses. Reproducible from (spec, seed) for any thread count.
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace npeb
