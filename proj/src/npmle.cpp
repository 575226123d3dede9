#include "npeb/npmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "npeb/errors.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using RowMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  return out;
}

// One pass over the included rows at `weights`: log-likelihood and score.
void evaluate(const ComponentTable& table, const std::vector<double>& weights,
              std::optional<std::size_t> exclude, EmState& state) {
  const auto n = static_cast<Eigen::Index>(table.rows());
  const auto m = static_cast<Eigen::Index>(table.cols());
  const RowMatrixMap r(table.data(), n, m);
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), m);
  Eigen::VectorXd f = r * w;
  double ll = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (exclude && static_cast<Eigen::Index>(*exclude) == j) {
      f[j] = 0.0;
      continue;
    }
    if (!(f[j] > 0.0)) {
      throw Error(ErrorCode::NumericalFailure,
                  "EM: marginal density of unit " + std::to_string(j) + " vanished");
    }
    ll += std::log(f[j]) + table.row_log_scale(static_cast<std::size_t>(j));
    f[j] = 1.0 / f[j];
  }
  if (std::isnan(ll)) throw Error(ErrorCode::NumericalFailure, "EM: log-likelihood is NaN");
  state.score.resize(table.cols());
  Eigen::Map<Eigen::VectorXd>(state.score.data(), m).noalias() = r.transpose() * f;
  state.loglik = ll;
}

std::size_t included_rows(const ComponentTable& table, std::optional<std::size_t> exclude) {
  return table.rows() - (exclude ? 1 : 0);
}

// EM iterations from a state whose loglik and score match its weights.
void iterate(const ComponentTable& table, EmState& state, const EmOptions& options,
             std::optional<std::size_t> exclude) {
  const double n_used = static_cast<double>(included_rows(table, exclude));
  const std::size_t m = table.cols();
  std::vector<double> next(m);
  EmState trial;
  state.trace.push_back(state.loglik);
  for (int it = 0; it < options.max_iters; ++it) {
    double total = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      next[a] = state.weights[a] * state.score[a] / n_used;
      total += next[a];
    }
    // renormalize against drift from rounding
    for (double& v : next) v /= total;
    evaluate(table, next, exclude, trial);
    const double step = trial.loglik - state.loglik;
    state.weights.swap(next);
    state.score.swap(trial.score);
    state.loglik = trial.loglik;
    state.iters = it + 1;
    state.trace.push_back(state.loglik);
    if (std::fabs(step) <= options.tol * std::max(1.0, std::fabs(state.loglik))) {
      state.converged = true;
      return;
    }
  }
}

std::vector<double> initial_weights(std::span<const MixtureAtom> grid) {
  std::vector<double> w(grid.size());
  double total = 0.0;
  for (std::size_t a = 0; a < grid.size(); ++a) total += (w[a] = grid[a].weight);
  for (double& v : w) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(w.size());
  return w;
}

NpmleFit make_fit(std::vector<MixtureAtom> grid, const EmState& state, int j_count,
                  std::size_t n_used, const SieveConfig& config, double sigma_lower) {
  for (std::size_t a = 0; a < grid.size(); ++a) grid[a].weight = state.weights[a];
  NpmleFit fit(DiscreteMixture(grid, j_count), grid);
  fit.final_loglik = state.loglik;
  fit.iters_used = state.iters;
  fit.converged = state.converged;
  fit.loglik_trace = state.trace;
  fit.gap_bound = state.optimality_gap_bound(n_used);
  fit.eta = config.eta_rule(n_used);
  fit.sigma_lower = sigma_lower;
  return fit;
}

}  // namespace

std::size_t SieveConfig::default_order(std::size_t n) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
}

double SieveConfig::default_eta(std::size_t n) { return 1.0 / static_cast<double>(n); }

double resolve_sigma_lower(std::span<const SufficientStats> stats, const SieveConfig& config) {
  if (config.sigma_lower) {
    if (!(*config.sigma_lower > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "sigma_lower must be positive");
    }
    return *config.sigma_lower;
  }
  if (stats.empty()) throw Error(ErrorCode::EmptyData, "no units");
  double min_s = kInf;
  for (const auto& u : stats) min_s = std::min(min_s, u.s());
  return std::max(0.5 * min_s, 1e-3);
}

std::vector<MixtureAtom> build_sieve_grid(std::span<const SufficientStats> stats,
                                          const SieveConfig& config) {
  if (stats.empty()) throw Error(ErrorCode::EmptyData, "build_sieve_grid: no units");
  const double sigma_lower = resolve_sigma_lower(stats, config);
  double y_lo = kInf, y_hi = -kInf, s_lo = kInf, s_hi = -kInf;
  for (const auto& u : stats) {
    y_lo = std::min(y_lo, u.y_bar);
    y_hi = std::max(y_hi, u.y_bar);
    s_lo = std::min(s_lo, u.s());
    s_hi = std::max(s_hi, u.s());
  }
  s_lo = std::max(s_lo, sigma_lower);
  const std::size_t order = std::max<std::size_t>(config.order_rule(stats.size()), 2);

  const bool mu_degenerate = !(y_hi > y_lo);
  const bool sigma_degenerate = !(s_hi > s_lo);
  std::size_t g_mu, g_sigma;
  if (mu_degenerate && sigma_degenerate) {
    g_mu = g_sigma = 1;
  } else if (sigma_degenerate) {
    g_sigma = 1;
    g_mu = order;
  } else if (mu_degenerate) {
    g_mu = 1;
    g_sigma = order;
  } else {
    g_sigma = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(order))));
    g_mu = order / g_sigma;
  }
  if (sigma_degenerate) s_hi = s_lo;

  const auto mus = linspace(y_lo, y_hi, g_mu);
  const auto sigmas = linspace(s_lo, s_hi, g_sigma);
  std::vector<MixtureAtom> grid;
  grid.reserve(g_mu * g_sigma);
  for (double s : sigmas) {
    for (double mu : mus) grid.push_back({0.0, mu, s});
  }
  return grid;
}

ComponentTable ComponentTable::bivariate(std::span<const SufficientStats> stats,
                                         std::span<const MixtureAtom> grid) {
  ComponentTable t(stats.size(), grid.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& u = stats[i];
    double* row = t.values_.data() + i * t.cols_;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      row[a] = component_log_density(grid[a], u.j_count, u.y_bar, u.s2);
    }
    t.finalize_row(i);
  }
  return t;
}

ComponentTable ComponentTable::location_only(std::span<const SufficientStats> stats,
                                             std::span<const double> mu_grid,
                                             double common_sigma) {
  ComponentTable t(stats.size(), mu_grid.size());
  const double var = common_sigma * common_sigma;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& u = stats[i];
    double* row = t.values_.data() + i * t.cols_;
    for (std::size_t a = 0; a < mu_grid.size(); ++a) {
      row[a] = normal_log_pdf(u.y_bar, mu_grid[a], var / u.j_count);
    }
    t.finalize_row(i);
  }
  return t;
}

void ComponentTable::finalize_row(std::size_t i) {
  double* row = values_.data() + i * cols_;
  double m = -kInf;
  for (std::size_t a = 0; a < cols_; ++a) m = std::max(m, row[a]);
  if (!std::isfinite(m)) {
    throw Error(ErrorCode::NumericalFailure,
                "component densities of unit " + std::to_string(i) + " are not finite");
  }
  for (std::size_t a = 0; a < cols_; ++a) row[a] = std::exp(row[a] - m);
  log_scale_[i] = m;
}

namespace {

double min_trace_step(const std::vector<double>& trace) {
  double out = kInf;
  for (std::size_t i = 1; i < trace.size(); ++i) out = std::min(out, trace[i] - trace[i - 1]);
  return out;
}

}  // namespace

double EmState::min_step() const { return min_trace_step(trace); }

double SupportFit::min_step() const { return min_trace_step(trace); }

double EmState::optimality_gap_bound(std::size_t n_used) const {
  double best = -kInf;
  for (double s : score) best = std::max(best, s);
  return std::max(0.0, best - static_cast<double>(n_used));
}

EmState run_em(const ComponentTable& table, std::vector<double> init_weights,
               const EmOptions& options, std::optional<std::size_t> exclude) {
  if (init_weights.size() != table.cols()) {
    throw Error(ErrorCode::LengthMismatch, "run_em: weight vector does not match the grid");
  }
  if (included_rows(table, exclude) == 0) throw Error(ErrorCode::EmptyData, "run_em: no units");
  EmState state;
  state.weights = std::move(init_weights);
  evaluate(table, state.weights, exclude, state);
  iterate(table, state, options, exclude);
  return state;
}

EmState run_em_leave_one_out(const ComponentTable& table, const EmState& full,
                             std::size_t exclude, const EmOptions& options) {
  if (exclude >= table.rows()) throw Error(ErrorCode::UnknownUnit, "leave-one-out index out of range");
  if (table.rows() < 2) throw Error(ErrorCode::EmptyData, "leave-one-out needs two units");
  const auto row = table.row(exclude);
  double f = 0.0;
  for (std::size_t a = 0; a < row.size(); ++a) f += row[a] * full.weights[a];
  EmState state;
  state.weights = full.weights;
  state.score = full.score;
  for (std::size_t a = 0; a < row.size(); ++a) state.score[a] -= row[a] / f;
  state.loglik = full.loglik - (std::log(f) + table.row_log_scale(exclude));
  iterate(table, state, options, exclude);
  return state;
}

std::vector<double> NpmleFit::weights() const {
  std::vector<double> w(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) w[a] = grid[a].weight;
  return w;
}

double NpmleFit::min_loglik_step() const { return min_trace_step(loglik_trace); }

SupportFit fit_free_support(std::span<const SufficientStats> stats,
                            std::vector<MixtureAtom> start, const SieveConfig& config,
                            bool location_only) {
  if (stats.empty()) throw Error(ErrorCode::EmptyData, "fit_free_support: no units");
  if (start.empty()) throw Error(ErrorCode::InvalidArgument, "fit_free_support: no atoms");
  const std::size_t n = stats.size();
  const std::size_t m = start.size();
  const double sigma_lower = resolve_sigma_lower(stats, config);
  double y_lo = kInf, y_hi = -kInf, s_hi = -kInf, y_sum = 0.0;
  for (const auto& u : stats) {
    y_lo = std::min(y_lo, u.y_bar);
    y_hi = std::max(y_hi, u.y_bar);
    s_hi = std::max(s_hi, u.s());
    y_sum += u.y_bar;
  }
  s_hi = std::max(s_hi, sigma_lower);
  const double var_lo = sigma_lower * sigma_lower, var_hi = s_hi * s_hi;
  // centered y_bar keeps the second-moment sums well conditioned
  const double center = y_sum / static_cast<double>(n);

  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(m);
  Eigen::ArrayXd yc(rows), jj(rows), kk(rows), ks2(rows), unit_const(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& u = stats[static_cast<std::size_t>(i)];
    yc[i] = u.y_bar - center;
    jj[i] = u.j_count;
    kk[i] = u.k;
    ks2[i] = u.k * u.s2;
    unit_const[i] = -kLogSqrt2Pi + 0.5 * std::log(jj[i]);
    if (location_only) {
      kk[i] = 0.0;
      ks2[i] = 0.0;
    } else {
      unit_const[i] += (u.k - 1.0) * std::log(u.s2) + u.k * std::log(u.k) - std::lgamma(u.k);
    }
  }
  // per-unit factors of the complete-data sums: 1, J y, J, J y^2, k s2, k + 1/2
  Eigen::MatrixXd x(rows, 6);
  x.col(0).setOnes();
  x.col(1) = (jj * yc).matrix();
  x.col(2) = jj.matrix();
  x.col(3) = (jj * yc * yc).matrix();
  x.col(4) = ks2.matrix();
  x.col(5) = (kk + 0.5).matrix();
  const Eigen::ArrayXd half_j = 0.5 * jj;
  const Eigen::ArrayXd k_half = kk + 0.5;

  std::vector<double> w(m), mu(m), var(m);
  double w_total = 0.0;
  for (const auto& a : start) w_total += a.weight;
  for (std::size_t a = 0; a < m; ++a) {
    w[a] = w_total > 0.0 ? start[a].weight / w_total : 1.0 / static_cast<double>(m);
    mu[a] = std::clamp(start[a].mu, y_lo, y_hi) - center;
    var[a] = start[a].sigma * start[a].sigma;
    if (!location_only) var[a] = std::clamp(var[a], var_lo, var_hi);
  }

  Eigen::ArrayXXd lc(rows, cols);
  Eigen::MatrixXd sums(cols, 6);
  SupportFit out;
  double prev = -kInf;
  for (int it = 0;; ++it) {
    for (Eigen::Index a = 0; a < cols; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      const double log_w = w[ua] > 0.0 ? std::log(w[ua]) : -kInf;
      lc.col(a) = log_w - k_half * std::log(var[ua]) -
                  (half_j * (yc - mu[ua]).square() + ks2) / var[ua];
    }
    const Eigen::ArrayXd top = lc.rowwise().maxCoeff();
    if (!top.isFinite().all()) {
      Eigen::Index bad = 0;
      (!top.isFinite()).maxCoeff(&bad);
      throw Error(ErrorCode::NumericalFailure,
                  "EM: marginal density of unit " + std::to_string(bad) + " vanished");
    }
    lc.colwise() -= top;
    lc = lc.exp();
    const Eigen::ArrayXd f = lc.rowwise().sum();
    const double ll = (unit_const + top + f.log()).sum();
    if (std::isnan(ll)) throw Error(ErrorCode::NumericalFailure, "EM: log-likelihood is NaN");
    out.trace.push_back(ll);
    out.loglik = ll;
    if (it > 0 && std::fabs(ll - prev) <= config.em_tol * std::max(1.0, std::fabs(ll))) {
      out.converged = true;
      break;
    }
    if (it == config.max_em_iters) break;
    prev = ll;
    out.iters = it + 1;
    lc.colwise() /= f;
    sums.noalias() = lc.matrix().transpose() * x;
    for (std::size_t a = 0; a < m; ++a) {
      const auto r = static_cast<Eigen::Index>(a);
      const double sw = sums(r, 0), sjy = sums(r, 1), sj = sums(r, 2);
      w[a] = sw / static_cast<double>(n);
      if (!(sw > 0.0)) continue;
      mu[a] = std::clamp(sjy / sj, y_lo - center, y_hi - center);
      if (location_only) continue;
      const double ss = 0.5 * (sums(r, 3) - 2.0 * mu[a] * sjy + mu[a] * mu[a] * sj) + sums(r, 4);
      var[a] = std::clamp(ss / sums(r, 5), var_lo, var_hi);
    }
  }
  out.atoms.resize(m);
  for (std::size_t a = 0; a < m; ++a) out.atoms[a] = {w[a], mu[a] + center, std::sqrt(var[a])};
  return out;
}

std::vector<MixtureAtom> sieve_support(std::span<const SufficientStats> stats,
                                       const SieveConfig& config) {
  auto grid = build_sieve_grid(stats, config);
  if (!config.free_support) return grid;
  return fit_free_support(stats, std::move(grid), config).atoms;
}

NpmleFit fit_npmle(std::span<const SufficientStats> stats, const SieveConfig& config) {
  if (stats.size() < 2) throw Error(ErrorCode::EmptyData, "fit_npmle needs at least two units");
  auto grid = sieve_support(stats, config);
  const auto table = ComponentTable::bivariate(stats, grid);
  const auto state = run_em(table, initial_weights(grid), {config.max_em_iters, config.em_tol});
  return make_fit(std::move(grid), state, stats.front().j_count, stats.size(), config,
                  resolve_sigma_lower(stats, config));
}

NpmleFit fit_loo_npmle(std::span<const SufficientStats> stats, const NpmleFit& full_fit,
                       const std::string& exclude, const SieveConfig& config) {
  const auto it = std::find_if(stats.begin(), stats.end(),
                               [&](const SufficientStats& u) { return u.unit_id == exclude; });
  if (it == stats.end()) throw Error(ErrorCode::UnknownUnit, "unknown unit '" + exclude + "'");
  if (stats.size() < 2) throw Error(ErrorCode::EmptyData, "leave-one-out needs two units");
  const auto index = static_cast<std::size_t>(it - stats.begin());
  const auto table = ComponentTable::bivariate(stats, full_fit.grid);
  EmState state;
  state.weights = full_fit.weights();
  evaluate(table, state.weights, index, state);
  iterate(table, state, {config.loo_max_iters, config.em_tol}, index);
  const int j_count = stats[index == 0 ? 1 : 0].j_count;
  return make_fit(full_fit.grid, state, j_count, stats.size() - 1, config, full_fit.sigma_lower);
}

LeaveOneOutFitter::LeaveOneOutFitter(std::span<const SufficientStats> stats,
                                     std::vector<MixtureAtom> grid, ComponentTable table,
                                     const SieveConfig& config)
    : grid_(std::move(grid)),
      table_(std::move(table)),
      full_options_{config.max_em_iters, config.em_tol},
      loo_options_{config.loo_max_iters, config.em_tol} {
  if (stats.size() != table_.rows() || grid_.size() != table_.cols()) {
    throw Error(ErrorCode::LengthMismatch, "LeaveOneOutFitter: table does not match inputs");
  }
  full_ = run_em(table_, initial_weights(grid_), full_options_);
}

EmState LeaveOneOutFitter::refit_without(std::size_t unit_index) const {
  return run_em_leave_one_out(table_, full_, unit_index, loo_options_);
}

}  // namespace npeb
