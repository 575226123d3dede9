#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npeb/core_model.hpp"
#include "npeb/mixture_density.hpp"
#include "npeb/npmle.hpp"

namespace npeb {

enum class Method { Het, HetFull, Hom, Naive, Oracle };

std::string_view method_name(Method m);
/// Parses "HET", "HET_FULL", "HOM", "NAIVE" or "ORACLE" (case-insensitive).
Method parse_method(std::string_view name);

struct EstimatorConfig {
  /// Denominator floor rho. Unset means 1 / n.
  std::optional<double> rho;
  std::vector<double> alpha_list = {0.1};

  double rho_for(std::size_t n) const;
  void validate() const;
};

struct UnitEstimates {
  std::string unit_id;
  Method method = Method::Naive;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  double sigma2_hat = 0.0;
  std::map<double, double> q_hat;
  /// The density floor rho was active in the denominator.
  bool truncated = false;
};

/// Truncated Tweedie-form posterior means of (mu, sigma, sigma^2) at one point.
struct PosteriorMoments {
  double mu = 0.0;
  double sigma = 0.0;
  double sigma2 = 0.0;
  bool truncated = false;

  double quantile(double alpha) const;
};

/// All three estimators at (y, s2) under G with floor rho. Uses the closed
/// form tail integrals of every atom; no numerical integration.
PosteriorMoments tweedie_moments(double y, double s2, const DiscreteMixture& g, double rho);

double estimate_sigma2(double y, double s2, const DiscreteMixture& g, double rho);
double estimate_sigma(double y, double s2, const DiscreteMixture& g, double rho);
double estimate_mu(double y, double s2, const DiscreteMixture& g, double rho);
double estimate_quantile(double y, double s2, double alpha, const DiscreteMixture& g, double rho);

/// Same estimators from one row of a component table and grid weights. Each
/// atom contributes w_m * L_im times (mu_m - y), sigma_m^2 or sigma_m, which
/// are k * T0 / gamma and (k / sqrt(pi)) * Thalf / gamma for that atom.
PosteriorMoments tweedie_moments_from_row(double y, std::span<const double> row,
                                          double row_log_scale,
                                          std::span<const double> weights,
                                          std::span<const MixtureAtom> grid, double rho);

/// HET: full sieve fit, then a warm-started leave-one-out refit per unit.
/// With leave_one_out = false every unit uses the full fit (HET_FULL).
/// `threads` > 1 runs the refits concurrently; results do not depend on it.
std::vector<UnitEstimates> estimate_all_units_het(std::span<const SufficientStats> stats,
                                                  const SieveConfig& sieve,
                                                  const EstimatorConfig& est,
                                                  bool leave_one_out = true, int threads = 1);

/// HET and HET_FULL from a single full fit.
struct HetResults {
  std::vector<UnitEstimates> het;
  std::vector<UnitEstimates> het_full;
  NpmleFit full_fit;
  /// Smallest log-likelihood step over the full fit and every refit.
  double min_em_step = 0.0;
  int max_loo_iters = 0;
};

HetResults estimate_het_variants(std::span<const SufficientStats> stats, const SieveConfig& sieve,
                                 const EstimatorConfig& est, int threads = 1);

/// HOM: common sigma^2 = mean(s_i^2), leave-one-out location-only sieve fit
/// with order_rule(n) atoms started equi-spaced over [min y_bar, max y_bar].
/// With free_support the atom locations are refined before the weight fit.
struct HomResults {
  std::vector<UnitEstimates> estimates;
  double min_em_step = 0.0;
};

HomResults estimate_hom(std::span<const SufficientStats> stats, const SieveConfig& sieve,
                        const EstimatorConfig& est, int threads = 1);

std::vector<UnitEstimates> estimate_all_units_hom(std::span<const SufficientStats> stats,
                                                  const SieveConfig& sieve,
                                                  const EstimatorConfig& est, int threads = 1);

std::vector<UnitEstimates> estimate_all_units_naive(std::span<const SufficientStats> stats,
                                                    std::span<const double> alpha_list);

}  // namespace npeb
