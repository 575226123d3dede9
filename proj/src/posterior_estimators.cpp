#include "npeb/posterior_estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "npeb/errors.hpp"
#include "npeb/parallel.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Scaled denominator (f v rho) * exp(-log_scale) given the scaled density sum.
double floored_denominator(double scaled_f, double log_scale, double rho, bool& truncated) {
  const double log_f = std::log(scaled_f) + log_scale;
  if (rho > 0.0 && log_f < std::log(rho)) {
    truncated = true;
    return std::exp(std::log(rho) - log_scale);
  }
  truncated = false;
  if (!(scaled_f > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "Tweedie estimators: zero density with rho = 0");
  }
  return scaled_f;
}

void fill_quantiles(UnitEstimates& e, std::span<const double> alphas) {
  for (double a : alphas) e.q_hat[a] = e.mu_hat + e.sigma_hat * normal_quantile(a);
}

UnitEstimates to_estimates(const std::string& id, Method method, const PosteriorMoments& pm,
                           std::span<const double> alphas) {
  UnitEstimates e;
  e.unit_id = id;
  e.method = method;
  e.mu_hat = pm.mu;
  e.sigma_hat = pm.sigma;
  e.sigma2_hat = pm.sigma2;
  e.truncated = pm.truncated;
  fill_quantiles(e, alphas);
  return e;
}

std::vector<double> grid_weights(const std::vector<MixtureAtom>& grid) {
  std::vector<double> w(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) w[a] = grid[a].weight;
  return w;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Het: return "HET";
    case Method::HetFull: return "HET_FULL";
    case Method::Hom: return "HOM";
    case Method::Naive: return "NAIVE";
    case Method::Oracle: return "ORACLE";
  }
  return "UNKNOWN";
}

Method parse_method(std::string_view name) {
  std::string upper(name);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Method m : {Method::Het, Method::HetFull, Method::Hom, Method::Naive, Method::Oracle}) {
    if (method_name(m) == upper) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

double EstimatorConfig::rho_for(std::size_t n) const {
  if (rho) return *rho;
  return 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
}

void EstimatorConfig::validate() const {
  if (rho && !(*rho >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rho must be >= 0");
  for (double a : alpha_list) {
    if (!(a > 0.0 && a < 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "quantile levels must lie strictly inside (0, 1)");
    }
  }
}

double PosteriorMoments::quantile(double alpha) const { return mu + sigma * normal_quantile(alpha); }

PosteriorMoments tweedie_moments(double y, double s2, const DiscreteMixture& g, double rho) {
  if (!(s2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "s2 must be positive");
  if (!(rho >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rho must be >= 0");
  const double k = g.k();
  const int j = g.j_count();
  const std::size_t m = g.size();

  // log of w * phi(y) and of w * phi(y) * gamma(s2): the latter forms f_G.
  std::vector<double> log_w_phi(m), log_joint(m);
  std::vector<TailIntegrals> tails(m);
  double shift = kNegInf;
  for (std::size_t a = 0; a < m; ++a) {
    const auto& atom = g.atoms()[a];
    log_w_phi[a] = std::log(atom.weight) + normal_log_pdf(y, atom.mu, atom.var_y(j));
    log_joint[a] = log_w_phi[a] + gamma_log_pdf(s2, k, atom.theta(k));
    tails[a] = log_tail_integrals(atom, j, s2);
    shift = std::max(shift, log_joint[a]);
  }
  if (!std::isfinite(shift)) {
    if (rho == 0.0) {
      throw Error(ErrorCode::InvalidArgument, "Tweedie estimators: zero density with rho = 0");
    }
    return {y, 0.0, 0.0, true};
  }

  double f = 0.0, d_int = 0.0, int0 = 0.0, inthalf = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const auto& atom = g.atoms()[a];
    f += std::exp(log_joint[a] - shift);
    // d/dy of w * phi(y) * T0 is w * phi(y) * T0 * (mu - y) * J / sigma^2
    const double w_phi_t0 = std::exp(log_w_phi[a] + tails[a].t0 - shift);
    d_int += w_phi_t0 * (atom.mu - y) * j / (atom.sigma * atom.sigma);
    int0 += w_phi_t0;
    inthalf += std::exp(log_w_phi[a] + tails[a].thalf - shift);
  }
  PosteriorMoments out;
  const double denom = floored_denominator(f, shift, rho, out.truncated);
  out.mu = y + (k / j) * d_int / denom;
  out.sigma2 = k * int0 / denom;
  out.sigma = (k / kSqrtPi) * inthalf / denom;
  return out;
}

double estimate_sigma2(double y, double s2, const DiscreteMixture& g, double rho) {
  return tweedie_moments(y, s2, g, rho).sigma2;
}

double estimate_sigma(double y, double s2, const DiscreteMixture& g, double rho) {
  return tweedie_moments(y, s2, g, rho).sigma;
}

double estimate_mu(double y, double s2, const DiscreteMixture& g, double rho) {
  return tweedie_moments(y, s2, g, rho).mu;
}

double estimate_quantile(double y, double s2, double alpha, const DiscreteMixture& g, double rho) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha must lie strictly inside (0, 1)");
  }
  return tweedie_moments(y, s2, g, rho).quantile(alpha);
}

PosteriorMoments tweedie_moments_from_row(double y, std::span<const double> row,
                                          double row_log_scale,
                                          std::span<const double> weights,
                                          std::span<const MixtureAtom> grid, double rho) {
  double f = 0.0, mu_num = 0.0, s2_num = 0.0, s_num = 0.0;
  for (std::size_t a = 0; a < row.size(); ++a) {
    const double p = weights[a] * row[a];
    f += p;
    mu_num += p * (grid[a].mu - y);
    s2_num += p * grid[a].sigma * grid[a].sigma;
    s_num += p * grid[a].sigma;
  }
  PosteriorMoments out;
  const double denom = floored_denominator(f, row_log_scale, rho, out.truncated);
  out.mu = y + mu_num / denom;
  out.sigma2 = s2_num / denom;
  out.sigma = s_num / denom;
  return out;
}

HetResults estimate_het_variants(std::span<const SufficientStats> stats, const SieveConfig& sieve,
                                 const EstimatorConfig& est, int threads) {
  est.validate();
  if (stats.size() < 2) throw Error(ErrorCode::EmptyData, "HET needs at least two units");
  auto grid = build_sieve_grid(stats, sieve);
  double support_min_step = std::numeric_limits<double>::infinity();
  if (sieve.free_support) {
    auto support = fit_free_support(stats, std::move(grid), sieve);
    grid = std::move(support.atoms);
    support_min_step = support.min_step();
  }
  auto table = ComponentTable::bivariate(stats, grid);
  const LeaveOneOutFitter fitter(stats, grid, std::move(table), sieve);
  const double rho = est.rho_for(stats.size());
  const auto& full = fitter.full_state();

  for (std::size_t a = 0; a < grid.size(); ++a) grid[a].weight = full.weights[a];
  NpmleFit full_fit(DiscreteMixture(grid, stats.front().j_count), grid);
  full_fit.final_loglik = full.loglik;
  full_fit.iters_used = full.iters;
  full_fit.converged = full.converged;
  full_fit.loglik_trace = full.trace;
  full_fit.gap_bound = full.optimality_gap_bound(stats.size());
  full_fit.eta = sieve.eta_rule(stats.size());
  full_fit.sigma_lower = resolve_sigma_lower(stats, sieve);

  const std::size_t n = stats.size();
  HetResults out{{}, {}, std::move(full_fit)};
  out.het.resize(n);
  out.het_full.resize(n);
  std::vector<double> min_steps(n);
  std::vector<int> iters(n);
  const auto& tab = fitter.table();
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& u = stats[i];
    const auto pm_full = tweedie_moments_from_row(u.y_bar, tab.row(i), tab.row_log_scale(i),
                                                  full.weights, grid, rho);
    out.het_full[i] = to_estimates(u.unit_id, Method::HetFull, pm_full, est.alpha_list);
    const auto loo = fitter.refit_without(i);
    const auto pm = tweedie_moments_from_row(u.y_bar, tab.row(i), tab.row_log_scale(i),
                                             loo.weights, grid, rho);
    out.het[i] = to_estimates(u.unit_id, Method::Het, pm, est.alpha_list);
    min_steps[i] = loo.min_step();
    iters[i] = loo.iters;
  });
  out.min_em_step = std::min(support_min_step, full.min_step());
  for (std::size_t i = 0; i < n; ++i) {
    out.min_em_step = std::min(out.min_em_step, min_steps[i]);
    out.max_loo_iters = std::max(out.max_loo_iters, iters[i]);
  }
  return out;
}

std::vector<UnitEstimates> estimate_all_units_het(std::span<const SufficientStats> stats,
                                                  const SieveConfig& sieve,
                                                  const EstimatorConfig& est,
                                                  bool leave_one_out, int threads) {
  if (!leave_one_out) {
    est.validate();
    const auto fit = fit_npmle(stats, sieve);
    const auto table = ComponentTable::bivariate(stats, fit.grid);
    const auto w = grid_weights(fit.grid);
    const double rho = est.rho_for(stats.size());
    std::vector<UnitEstimates> out;
    out.reserve(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const auto pm = tweedie_moments_from_row(stats[i].y_bar, table.row(i),
                                               table.row_log_scale(i), w, fit.grid, rho);
      out.push_back(to_estimates(stats[i].unit_id, Method::HetFull, pm, est.alpha_list));
    }
    return out;
  }
  return estimate_het_variants(stats, sieve, est, threads).het;
}

HomResults estimate_hom(std::span<const SufficientStats> stats, const SieveConfig& sieve,
                        const EstimatorConfig& est, int threads) {
  est.validate();
  const std::size_t n = stats.size();
  if (n < 2) throw Error(ErrorCode::EmptyData, "HOM needs at least two units");
  double s2_sum = 0.0;
  double y_lo = stats.front().y_bar, y_hi = y_lo;
  for (const auto& u : stats) {
    s2_sum += u.s2;
    y_lo = std::min(y_lo, u.y_bar);
    y_hi = std::max(y_hi, u.y_bar);
  }
  const double sigma2 = s2_sum / static_cast<double>(n);
  const double sigma = std::sqrt(sigma2);

  std::size_t order = std::max<std::size_t>(sieve.order_rule(n), 2);
  if (!(y_hi > y_lo)) order = 1;
  std::vector<double> mu_grid(order);
  for (std::size_t a = 0; a < order; ++a) {
    mu_grid[a] = order == 1 ? y_lo : y_lo + (y_hi - y_lo) * static_cast<double>(a) / (order - 1);
  }
  std::vector<MixtureAtom> grid(order);
  for (std::size_t a = 0; a < order; ++a) grid[a] = {0.0, mu_grid[a], sigma};
  std::vector<double> init(order, 1.0 / static_cast<double>(order));
  double support_min_step = std::numeric_limits<double>::infinity();
  if (sieve.free_support && order > 1) {
    auto support = fit_free_support(stats, std::move(grid), sieve, true);
    support_min_step = support.min_step();
    grid = std::move(support.atoms);
    for (std::size_t a = 0; a < order; ++a) {
      mu_grid[a] = grid[a].mu;
      init[a] = grid[a].weight;
    }
  }

  auto table = ComponentTable::location_only(stats, mu_grid, sigma);
  const EmOptions full_opts{sieve.max_em_iters, sieve.em_tol};
  const EmOptions loo_opts{sieve.loo_max_iters, sieve.em_tol};
  const auto full = run_em(table, std::move(init), full_opts);
  const double rho = est.rho_for(n);

  HomResults out;
  out.estimates.resize(n);
  std::vector<double> min_steps(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto loo = run_em_leave_one_out(table, full, i, loo_opts);
    auto pm = tweedie_moments_from_row(stats[i].y_bar, table.row(i), table.row_log_scale(i),
                                       loo.weights, grid, rho);
    // sigma is common; only the location posterior is data dependent
    pm.sigma = sigma;
    pm.sigma2 = sigma2;
    out.estimates[i] = to_estimates(stats[i].unit_id, Method::Hom, pm, est.alpha_list);
    min_steps[i] = loo.min_step();
  });
  out.min_em_step = std::min(support_min_step, full.min_step());
  for (double s : min_steps) out.min_em_step = std::min(out.min_em_step, s);
  return out;
}

std::vector<UnitEstimates> estimate_all_units_hom(std::span<const SufficientStats> stats,
                                                  const SieveConfig& sieve,
                                                  const EstimatorConfig& est, int threads) {
  return estimate_hom(stats, sieve, est, threads).estimates;
}

std::vector<UnitEstimates> estimate_all_units_naive(std::span<const SufficientStats> stats,
                                                    std::span<const double> alpha_list) {
  std::vector<UnitEstimates> out;
  out.reserve(stats.size());
  for (const auto& u : stats) {
    UnitEstimates e;
    e.unit_id = u.unit_id;
    e.method = Method::Naive;
    e.mu_hat = u.y_bar;
    e.sigma2_hat = u.s2;
    e.sigma_hat = u.s();
    fill_quantiles(e, alpha_list);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace npeb
