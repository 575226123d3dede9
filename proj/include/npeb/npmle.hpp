#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npeb/core_model.hpp"
#include "npeb/mixture_density.hpp"

namespace npeb {

/// Settings for the sieve MLE of the mixing distribution.
struct SieveConfig {
  /// Maximum number of support points as a function of n.
  std::function<std::size_t(std::size_t)> order_rule = default_order;
  /// Lower bound on sigma. Unset means 0.5 * min s_i, clipped at 1e-3.
  std::optional<double> sigma_lower;
  /// Likelihood tolerance eta_n; reported, not used for stopping.
  std::function<double(std::size_t)> eta_rule = default_eta;
  int max_em_iters = 2000;
  /// Stop once |delta loglik| <= em_tol * max(1, |loglik|).
  double em_tol = 1e-8;
  /// Iteration budget of a warm-started leave-one-out refit.
  int loo_max_iters = 50;
  /// Let the full-data fit move atom locations (starting from the grid).
  /// Leave-one-out refits always keep the atoms of the full fit.
  bool free_support = true;

  static std::size_t default_order(std::size_t n);
  static double default_eta(std::size_t n);
};

/// sigma_lower if set, otherwise the data-driven default.
double resolve_sigma_lower(std::span<const SufficientStats> stats, const SieveConfig& config);

/// Equi-spaced g_mu x g_sigma grid with g_mu * g_sigma <= order_rule(n):
/// mu over [min y_bar, max y_bar], sigma over [max(sigma_lower, min s), max s].
/// All template weights are zero.
std::vector<MixtureAtom> build_sieve_grid(std::span<const SufficientStats> stats,
                                          const SieveConfig& config);

/// Component densities of every unit at every grid atom, stored per row as
/// exp(log density - row maximum) together with the row maximum.
class ComponentTable {
 public:
  /// Bivariate (y_bar, s2) density; each unit uses its own J.
  static ComponentTable bivariate(std::span<const SufficientStats> stats,
                                  std::span<const MixtureAtom> grid);
  /// Density of y_bar alone with sigma fixed at common_sigma (homoskedastic).
  static ComponentTable location_only(std::span<const SufficientStats> stats,
                                      std::span<const double> mu_grid, double common_sigma);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols_, cols_};
  }
  double row_log_scale(std::size_t i) const { return log_scale_[i]; }
  /// Row-major values, rows() x cols().
  const double* data() const { return values_.data(); }

 private:
  ComponentTable(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols), log_scale_(rows) {}
  void finalize_row(std::size_t i);

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
  std::vector<double> log_scale_;
};

/// State of the weight EM. `score[m]` is sum_j L_jm / f_j over the included
/// rows at `weights`, so w_m * score[m] / n is the next EM update.
struct EmState {
  std::vector<double> weights;
  std::vector<double> score;
  double loglik = 0.0;
  int iters = 0;
  bool converged = false;
  /// Log-likelihood at the start and after every iteration.
  std::vector<double> trace;

  /// Smallest per-iteration log-likelihood change (+inf without iterations).
  double min_step() const;
  /// Upper bound on sup_w loglik(w) - loglik from EM duality: max_m score[m] - n_used.
  double optimality_gap_bound(std::size_t n_used) const;
};

struct EmOptions {
  int max_iters = 2000;
  double tol = 1e-8;
};

/// EM over mixture weights on a fixed table, optionally skipping one row.
/// Throws NumericalFailure if the log-likelihood turns NaN or -inf.
EmState run_em(const ComponentTable& table, std::vector<double> init_weights,
               const EmOptions& options, std::optional<std::size_t> exclude = std::nullopt);

/// Leave-one-out EM warm-started at a converged full-data state. The first
/// update reuses full.score, so it costs O(#atoms).
EmState run_em_leave_one_out(const ComponentTable& table, const EmState& full,
                             std::size_t exclude, const EmOptions& options);

struct NpmleFit {
  NpmleFit(DiscreteMixture m, std::vector<MixtureAtom> g)
      : mixture(std::move(m)), grid(std::move(g)) {}

  DiscreteMixture mixture;
  /// Full grid with fitted weights, zero-weight atoms included.
  std::vector<MixtureAtom> grid;
  double final_loglik = 0.0;
  int iters_used = 0;
  bool converged = false;
  std::vector<double> loglik_trace;
  double gap_bound = 0.0;
  double eta = 0.0;
  double sigma_lower = 0.0;

  std::vector<double> weights() const;
  double min_loglik_step() const;
};

/// Sieve NPMLE: EM over the weights on sieve_support(), started from its
/// weights. Units may differ in J; the mixture records the J of the first unit.
NpmleFit fit_npmle(std::span<const SufficientStats> stats, const SieveConfig& config);

/// Refit without unit `exclude`, warm-started at full_fit's weights on the
/// same grid and limited to config.loo_max_iters iterations.
NpmleFit fit_loo_npmle(std::span<const SufficientStats> stats, const NpmleFit& full_fit,
                       const std::string& exclude, const SieveConfig& config);

/// Result of EM over weights and locations of a fixed number of atoms.
struct SupportFit {
  std::vector<MixtureAtom> atoms;
  double loglik = 0.0;
  int iters = 0;
  bool converged = false;
  std::vector<double> trace;

  double min_step() const;
};

/// Location-scale EM from `start` (weights and locations). mu stays inside
/// [min y_bar, max y_bar] and sigma inside [sigma_lower, max s]. Zero start
/// weights are replaced by uniform ones. With location_only the likelihood is
/// that of y_bar alone and each atom keeps its sigma.
SupportFit fit_free_support(std::span<const SufficientStats> stats,
                            std::vector<MixtureAtom> start, const SieveConfig& config,
                            bool location_only = false);

/// Atoms used by the sieve fit: the grid, or the free-support refinement of
/// it when config.free_support is set. Weights are initial EM weights.
std::vector<MixtureAtom> sieve_support(std::span<const SufficientStats> stats,
                                       const SieveConfig& config);

/// Full fit plus cached table for many cheap leave-one-out refits. Immutable
/// after construction; refit() may be called concurrently.
class LeaveOneOutFitter {
 public:
  /// The full fit starts from the grid weights, or uniform if they are all zero.
  LeaveOneOutFitter(std::span<const SufficientStats> stats, std::vector<MixtureAtom> grid,
                    ComponentTable table, const SieveConfig& config);

  const EmState& full_state() const { return full_; }
  const ComponentTable& table() const { return table_; }
  const std::vector<MixtureAtom>& grid() const { return grid_; }
  EmState refit_without(std::size_t unit_index) const;

 private:
  std::vector<MixtureAtom> grid_;
  ComponentTable table_;
  EmOptions full_options_;
  EmOptions loo_options_;
  EmState full_;
};

}  // namespace npeb
