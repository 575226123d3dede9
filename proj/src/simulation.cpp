#include "npeb/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "npeb/errors.hpp"
#include "npeb/format.hpp"
#include "npeb/parallel.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

namespace {

// Per-round losses, indexed [target][method] and [detection cell][method].
struct RoundLosses {
  std::vector<std::vector<double>> mse;
  std::vector<std::vector<double>> detection;
  ExperimentDiagnostics diag;
};

struct DetectionCell {
  std::size_t target_index;
  double c;
};

const std::vector<UnitEstimates>& pick_estimates(
    Method m, const std::map<Method, std::vector<UnitEstimates>>& all) {
  return all.at(m);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c)
    : engine_(mix_seed(mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b) ^ c)) {}

void DgpSpec::validate() const {
  if (!(nu > 0.0) || !(kappa > 0.0) || !(lambda > 0.0) || !(std::fabs(rho_copula) < 1.0) ||
      !std::isfinite(alpha)) {
    throw Error(ErrorCode::InvalidArgument,
                "DgpSpec needs nu, kappa, lambda > 0 and |rho_copula| < 1");
  }
}

std::string DgpSpec::describe() const {
  std::ostringstream os;
  os << "alpha=" << format_double(alpha) << " nu=" << format_double(nu)
     << " kappa=" << format_double(kappa) << " lambda=" << format_double(lambda)
     << " rho=" << format_double(rho_copula);
  return os.str();
}

void MomentTargets::validate() const {
  if (!(v_mu > 0.0) || !(v_sigma2 > 0.0) || !(e_sigma2 > 0.0) || !(std::fabs(cor_mu_sigma2) < 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "moment targets need v_mu, v_sigma2, e_sigma2 > 0 and |cor| < 1");
  }
}

double gamma_copula_covariance_factor(double kappa, double lambda) {
  static const HermiteRule rule = gauss_hermite_rule(120);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double z = rule.nodes[i];
    acc += rule.weights[i] * z * gamma_quantile_of_normal(z, kappa, lambda);
  }
  return acc;
}

DgpSpec calibrate_dgp(const MomentTargets& targets) {
  targets.validate();
  DgpSpec spec;
  spec.alpha = targets.e_mu;
  spec.nu = targets.v_mu;
  spec.lambda = targets.v_sigma2 / targets.e_sigma2;
  spec.kappa = targets.e_sigma2 / spec.lambda;
  if (targets.cor_mu_sigma2 == 0.0) {
    spec.rho_copula = 0.0;
    return spec;
  }
  const double cov = targets.cor_mu_sigma2 * std::sqrt(targets.v_mu * targets.v_sigma2);
  const double factor = gamma_copula_covariance_factor(spec.kappa, spec.lambda);
  const double rho = cov / (std::sqrt(spec.nu) * factor);
  if (!(std::fabs(rho) < 1.0)) {
    throw Error(ErrorCode::InfeasibleCorrelation,
                "correlation " + format_double(targets.cor_mu_sigma2) +
                    " needs copula rho = " + format_double(rho) + " outside (-1, 1)");
  }
  spec.rho_copula = rho;
  return spec;
}

std::vector<UnitTruth> draw_parameters(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  std::vector<UnitTruth> out(n);
  const double r_perp = std::sqrt(1.0 - spec.rho_copula * spec.rho_copula);
  const double sd_mu = std::sqrt(spec.nu);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rs(seed, i, 0);
    const double z2 = rs.normal();
    const double z1 = rs.normal();
    const double xi1 = spec.rho_copula * z2 + r_perp * z1;
    out[i].mu = spec.alpha + sd_mu * xi1;
    out[i].sigma = std::sqrt(gamma_quantile_of_normal(z2, spec.kappa, spec.lambda));
  }
  return out;
}

DrawnData draw_observations(const std::vector<UnitTruth>& truths, int j_count, std::uint64_t seed) {
  if (j_count <= 3) throw Error(ErrorCode::TooFewObservations, "J must exceed 3");
  DrawnData out;
  out.observations.resize(truths.size());
  out.dataset.units.reserve(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!(truths[i].sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
    RandomStream rs(seed, i, 1);
    auto& obs = out.observations[i];
    obs.unit_id = "u" + std::to_string(i);
    obs.values.resize(j_count);
    for (auto& v : obs.values) v = truths[i].mu + truths[i].sigma * rs.normal();
    out.dataset.units.push_back(compute_sufficient_stats(obs));
  }
  out.dataset.truths = truths;
  return out;
}

void ExperimentSpec::validate() const {
  if (rounds < 1) throw Error(ErrorCode::InvalidArgument, "rounds must be >= 1");
  if (j_count <= 3) throw Error(ErrorCode::InvalidArgument, "J must exceed 3");
  if (n_list.empty()) throw Error(ErrorCode::InvalidArgument, "n_list is empty");
  for (auto n : n_list) {
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "every n must be >= 2");
  }
  estimator.validate();
  resolved_dgp().validate();
}

DgpSpec ExperimentSpec::resolved_dgp() const {
  if (const auto* d = std::get_if<DgpSpec>(&dgp)) return *d;
  return calibrate_dgp(std::get<MomentTargets>(dgp));
}

std::vector<Target> ExperimentSpec::targets() const {
  std::vector<Target> out = {Target::mu(), Target::sigma(), Target::sigma2()};
  for (double a : alphas) out.push_back(Target::quantile(a));
  return out;
}

const RegretReport* ExperimentResult::find_mse(std::size_t n, const std::string& target) const {
  for (const auto& r : mse) {
    if (r.n == n && r.target == target) return &r;
  }
  return nullptr;
}

const RegretReport* ExperimentResult::find_detection(std::size_t n, const std::string& target,
                                                     double c) const {
  for (const auto& r : detection) {
    if (r.n == n && r.target == target && r.threshold && std::fabs(*r.threshold - c) < 1e-12) {
      return &r;
    }
  }
  return nullptr;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult result;
  result.dgp = spec.resolved_dgp();
  const auto targets = spec.targets();

  std::vector<Method> methods;
  for (Method m : spec.methods) {
    if (m != Method::Oracle && std::find(methods.begin(), methods.end(), m) == methods.end()) {
      methods.push_back(m);
    }
  }
  methods.push_back(Method::Oracle);

  std::vector<DetectionCell> cells;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto kind = targets[t].kind;
    const auto& grid = kind == Target::Kind::Mu         ? spec.detect_mu
                       : kind == Target::Kind::Quantile ? spec.detect_q
                                                        : std::vector<double>{};
    for (double c : grid) cells.push_back({t, c});
  }

  const CopulaOracle oracle(result.dgp, spec.oracle_nodes, spec.oracle_nodes);
  const bool want_het = std::count(methods.begin(), methods.end(), Method::Het) +
                            std::count(methods.begin(), methods.end(), Method::HetFull) > 0;
  const bool want_hom = std::count(methods.begin(), methods.end(), Method::Hom) > 0;

  auto& diag = result.diagnostics;
  diag.min_em_step = std::numeric_limits<double>::infinity();

  for (std::size_t n_index = 0; n_index < spec.n_list.size(); ++n_index) {
    const std::size_t n = spec.n_list[n_index];
    std::vector<RoundLosses> rounds(spec.rounds);
    // Parallel across rounds when there are several; otherwise across units.
    const int outer_threads = spec.rounds > 1 ? spec.threads : 1;
    const int inner_threads = spec.rounds > 1 ? 1 : spec.threads;

    parallel_for(static_cast<std::size_t>(spec.rounds), outer_threads, [&](std::size_t r) {
      const std::uint64_t round_seed = mix_seed(mix_seed(spec.seed ^ n) ^ r);
      const auto truths = draw_parameters(result.dgp, n, mix_seed(round_seed ^ 0x70));
      const auto drawn = draw_observations(truths, spec.j_count, mix_seed(round_seed ^ 0x71));
      const auto& stats = drawn.dataset.units;
      RoundLosses& out = rounds[r];
      out.diag.min_em_step = std::numeric_limits<double>::infinity();

      std::map<Method, std::vector<UnitEstimates>> estimates;
      if (want_het) {
        auto het = estimate_het_variants(stats, spec.sieve, spec.estimator, inner_threads);
        estimates[Method::Het] = std::move(het.het);
        estimates[Method::HetFull] = std::move(het.het_full);
        out.diag.min_em_step = std::min(out.diag.min_em_step, het.min_em_step);
        out.diag.fits += 1 + n;
        out.diag.max_full_iters = std::max(out.diag.max_full_iters, het.full_fit.iters_used);
        out.diag.max_loo_iters = std::max(out.diag.max_loo_iters, het.max_loo_iters);
        if (!het.full_fit.converged) ++out.diag.unconverged_full_fits;
        for (const auto& e : estimates[Method::Het]) out.diag.truncated_units += e.truncated;
      }
      if (want_hom) {
        auto hom = estimate_hom(stats, spec.sieve, spec.estimator, inner_threads);
        estimates[Method::Hom] = std::move(hom.estimates);
        out.diag.min_em_step = std::min(out.diag.min_em_step, hom.min_em_step);
        out.diag.fits += 1 + n;
      }
      estimates[Method::Naive] = estimate_all_units_naive(stats, spec.alphas);
      std::vector<UnitEstimates> oracle_rows(n);
      parallel_for(n, inner_threads, [&](std::size_t i) {
        const auto pm = oracle.posterior(stats[i].y_bar, stats[i].s2, stats[i].j_count);
        auto& e = oracle_rows[i];
        e.unit_id = stats[i].unit_id;
        e.method = Method::Oracle;
        e.mu_hat = pm.mu;
        e.sigma_hat = pm.sigma;
        e.sigma2_hat = pm.sigma2;
        for (double a : spec.alphas) e.q_hat[a] = pm.quantile(a);
      });
      estimates[Method::Oracle] = std::move(oracle_rows);

      std::vector<std::vector<double>> truth_values(targets.size(), std::vector<double>(n));
      for (std::size_t t = 0; t < targets.size(); ++t) {
        for (std::size_t i = 0; i < n; ++i) truth_values[t][i] = targets[t].of(truths[i]);
      }
      auto values_of = [&](Method m, std::size_t t) {
        const auto& rows = pick_estimates(m, estimates);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = targets[t].of(rows[i]);
        return v;
      };
      out.mse.assign(targets.size(), std::vector<double>(methods.size()));
      for (std::size_t t = 0; t < targets.size(); ++t) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
          out.mse[t][mi] = mse_loss(values_of(methods[mi], t), truth_values[t]);
        }
      }
      out.detection.assign(cells.size(), std::vector<double>(methods.size()));
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<std::vector<double>> cache(targets.size());
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
          const auto t = cells[ci].target_index;
          if (cache[t].empty()) cache[t] = values_of(methods[mi], t);
          out.detection[ci][mi] = detection_loss(cache[t], truth_values[t], cells[ci].c);
        }
      }
    });

    // deterministic fold in round order
    auto make = [&](const std::string& target, const std::string& loss, std::optional<double> c,
                    auto&& losses_of) {
      std::vector<std::pair<Method, std::vector<double>>> per_method;
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<double> v(spec.rounds);
        for (int r = 0; r < spec.rounds; ++r) v[r] = losses_of(rounds[r], mi);
        per_method.emplace_back(methods[mi], std::move(v));
      }
      auto report = make_regret_report(target, loss, c, per_method);
      report.n = n;
      report.j_count = spec.j_count;
      report.seed = spec.seed;
      report.dgp = result.dgp.describe();
      return report;
    };
    for (std::size_t t = 0; t < targets.size(); ++t) {
      result.mse.push_back(make(targets[t].name(), "mse", std::nullopt,
                                [t](const RoundLosses& rl, std::size_t mi) { return rl.mse[t][mi]; }));
    }
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      result.detection.push_back(make(targets[cells[ci].target_index].name(), "detection",
                                      cells[ci].c, [ci](const RoundLosses& rl, std::size_t mi) {
                                        return rl.detection[ci][mi];
                                      }));
    }
    for (const auto& rl : rounds) {
      diag.min_em_step = std::min(diag.min_em_step, rl.diag.min_em_step);
      diag.fits += rl.diag.fits;
      diag.unconverged_full_fits += rl.diag.unconverged_full_fits;
      diag.max_full_iters = std::max(diag.max_full_iters, rl.diag.max_full_iters);
      diag.max_loo_iters = std::max(diag.max_loo_iters, rl.diag.max_loo_iters);
      diag.truncated_units += rl.diag.truncated_units;
    }
  }
  return result;
}

}  // namespace npeb
