#include "npeb/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "npeb/errors.hpp"
#include "npeb/parallel.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double pick(const PosteriorMoments& pm, const Target& target) {
  switch (target.kind) {
    case Target::Kind::Mu: return pm.mu;
    case Target::Kind::Sigma: return pm.sigma;
    case Target::Kind::Sigma2: return pm.sigma2;
    case Target::Kind::Quantile: return pm.quantile(target.alpha);
  }
  return pm.mu;
}

}  // namespace

std::string Target::name() const {
  switch (kind) {
    case Kind::Mu: return "mu";
    case Kind::Sigma: return "sigma";
    case Kind::Sigma2: return "sigma2";
    case Kind::Quantile: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "q%.10g", 100.0 * alpha);
      return buf;
    }
  }
  return "unknown";
}

double Target::of(const UnitTruth& t) const {
  switch (kind) {
    case Kind::Mu: return t.mu;
    case Kind::Sigma: return t.sigma;
    case Kind::Sigma2: return t.sigma2();
    case Kind::Quantile: return t.quantile(alpha);
  }
  return t.mu;
}

double Target::of(const UnitEstimates& e) const {
  switch (kind) {
    case Kind::Mu: return e.mu_hat;
    case Kind::Sigma: return e.sigma_hat;
    case Kind::Sigma2: return e.sigma2_hat;
    case Kind::Quantile: {
      const auto it = e.q_hat.find(alpha);
      if (it != e.q_hat.end()) return it->second;
      return e.mu_hat + e.sigma_hat * normal_quantile(alpha);
    }
  }
  return e.mu_hat;
}

CopulaOracle::CopulaOracle(const DgpSpec& spec, int nodes_mu, int nodes_sigma) {
  spec.validate();
  if (nodes_mu < 8 || nodes_sigma < 8) {
    throw Error(ErrorCode::InvalidArgument, "oracle quadrature needs at least 8 nodes per axis");
  }
  const auto rule_mu = gauss_hermite_rule(nodes_mu);
  const auto rule_sigma = gauss_hermite_rule(nodes_sigma);
  const double r = spec.rho_copula;
  const double r_perp = std::sqrt(1.0 - r * r);
  const double sd_mu = std::sqrt(spec.nu);
  nodes_.reserve(static_cast<std::size_t>(nodes_mu) * nodes_sigma);
  for (int b = 0; b < nodes_sigma; ++b) {
    const double z2 = rule_sigma.nodes[b];
    const double sigma2 = gamma_quantile_of_normal(z2, spec.kappa, spec.lambda);
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) continue;  // zero-mass tail node
    for (int a = 0; a < nodes_mu; ++a) {
      const double xi1 = r * z2 + r_perp * rule_mu.nodes[a];
      nodes_.push_back({std::log(rule_mu.weights[a]) + std::log(rule_sigma.weights[b]),
                        spec.alpha + sd_mu * xi1, sigma2, std::sqrt(sigma2), std::log(sigma2)});
    }
  }
}

PosteriorMoments CopulaOracle::posterior(double y, double s2, int j_count) const {
  if (!(s2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "s2 must be positive");
  const double k = 0.5 * (j_count - 1);
  const double j = j_count;
  // node-dependent part of log[phi(y; mu, sigma^2/J) * gamma(s2; k, sigma^2/k)]
  std::vector<double> ll(nodes_.size());
  double shift = kNegInf;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& nd = nodes_[i];
    const double d = y - nd.mu;
    const double inv = 1.0 / nd.sigma2;
    ll[i] = nd.log_weight - (0.5 + k) * nd.log_sigma2 - (0.5 * j * d * d + k * s2) * inv;
    if (ll[i] > shift) shift = ll[i];
  }
  if (!std::isfinite(shift)) {
    throw Error(ErrorCode::QuadratureUnderflow,
                "oracle quadrature: all nodes have zero likelihood at this (y, s2)");
  }
  double total = 0.0, mu = 0.0, sigma = 0.0, sigma2 = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const double p = std::exp(ll[i] - shift);
    total += p;
    mu += p * nodes_[i].mu;
    sigma += p * nodes_[i].sigma;
    sigma2 += p * nodes_[i].sigma2;
  }
  return {mu / total, sigma / total, sigma2 / total, false};
}

PosteriorMoments discrete_posterior(double y, double s2, const DiscreteMixture& g) {
  std::vector<double> lp(g.size());
  double shift = kNegInf;
  for (std::size_t a = 0; a < g.size(); ++a) {
    const auto& atom = g.atoms()[a];
    lp[a] = std::log(atom.weight) + component_log_density(atom, g.j_count(), y, s2);
    shift = std::max(shift, lp[a]);
  }
  if (!std::isfinite(shift)) {
    throw Error(ErrorCode::QuadratureUnderflow, "discrete oracle: zero posterior mass");
  }
  double total = 0.0, mu = 0.0, sigma = 0.0, sigma2 = 0.0;
  for (std::size_t a = 0; a < g.size(); ++a) {
    const auto& atom = g.atoms()[a];
    const double p = std::exp(lp[a] - shift);
    total += p;
    mu += p * atom.mu;
    sigma += p * atom.sigma;
    sigma2 += p * atom.sigma * atom.sigma;
  }
  return {mu / total, sigma / total, sigma2 / total, false};
}

double oracle_posterior(const Target& target, double y, double s2, int j_count,
                        const OracleSpec& spec) {
  if (const auto* g = std::get_if<DiscreteMixture>(&spec.prior)) {
    return pick(discrete_posterior(y, s2, g->with_j(j_count)), target);
  }
  const CopulaOracle oracle(std::get<DgpSpec>(spec.prior), spec.nodes_mu, spec.nodes_sigma);
  return pick(oracle.posterior(y, s2, j_count), target);
}

std::vector<UnitEstimates> oracle_estimates(std::span<const SufficientStats> stats,
                                            const OracleSpec& spec,
                                            std::span<const double> alpha_list, int threads) {
  std::vector<UnitEstimates> out(stats.size());
  auto fill = [&](std::size_t i, const PosteriorMoments& pm) {
    auto& e = out[i];
    e.unit_id = stats[i].unit_id;
    e.method = Method::Oracle;
    e.mu_hat = pm.mu;
    e.sigma_hat = pm.sigma;
    e.sigma2_hat = pm.sigma2;
    for (double a : alpha_list) e.q_hat[a] = pm.quantile(a);
  };
  if (const auto* g = std::get_if<DiscreteMixture>(&spec.prior)) {
    parallel_for(stats.size(), threads, [&](std::size_t i) {
      const auto& u = stats[i];
      fill(i, discrete_posterior(u.y_bar, u.s2, g->with_j(u.j_count)));
    });
    return out;
  }
  const CopulaOracle oracle(std::get<DgpSpec>(spec.prior), spec.nodes_mu, spec.nodes_sigma);
  parallel_for(stats.size(), threads, [&](std::size_t i) {
    const auto& u = stats[i];
    fill(i, oracle.posterior(u.y_bar, u.s2, u.j_count));
  });
  return out;
}

}  // namespace npeb
