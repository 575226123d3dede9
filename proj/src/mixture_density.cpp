#include "npeb/mixture_density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "npeb/errors.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Per-atom log(w_m) + log component density, and their maximum.
double weighted_log_components(const DiscreteMixture& g, double y, double s2,
                               std::vector<double>& out) {
  out.resize(g.size());
  double m = kNegInf;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& a = g.atoms()[i];
    out[i] = std::log(a.weight) + component_log_density(a, g.j_count(), y, s2);
    m = std::max(m, out[i]);
  }
  return m;
}

}  // namespace

DiscreteMixture::DiscreteMixture(std::vector<MixtureAtom> atoms, int j_count) : j_count_(j_count) {
  if (j_count <= 3) {
    throw Error(ErrorCode::InvalidArgument, "DiscreteMixture: J must exceed 3");
  }
  double total = 0.0;
  atoms_.reserve(atoms.size());
  for (const auto& a : atoms) {
    if (!(a.weight >= 0.0) || !(a.sigma > 0.0) || !std::isfinite(a.mu)) {
      throw Error(ErrorCode::InvalidArgument,
                  "DiscreteMixture: atoms need weight >= 0, sigma > 0 and finite mu");
    }
    if (a.weight > 0.0) {
      atoms_.push_back(a);
      total += a.weight;
    }
  }
  if (atoms_.empty() || std::fabs(total - 1.0) > 1e-10) {
    throw Error(ErrorCode::InvalidArgument, "DiscreteMixture: weights must sum to 1");
  }
}

DiscreteMixture DiscreteMixture::with_j(int j_count) const { return DiscreteMixture(atoms_, j_count); }

double component_log_density(const MixtureAtom& atom, int j_count, double y, double s2) {
  const double k = 0.5 * (j_count - 1);
  const double var = atom.sigma * atom.sigma;
  return normal_log_pdf(y, atom.mu, var / j_count) + gamma_log_pdf(s2, k, var / k);
}

double component_density(const MixtureAtom& atom, int j_count, double y, double s2) {
  return std::exp(component_log_density(atom, j_count, y, s2));
}

double mixture_log_density(const DiscreteMixture& g, double y, double s2) {
  std::vector<double> lc;
  weighted_log_components(g, y, s2, lc);
  return log_sum_exp(lc);
}

double mixture_density(const DiscreteMixture& g, double y, double s2) {
  return std::exp(mixture_log_density(g, y, s2));
}

double mixture_density_dy(const DiscreteMixture& g, double y, double s2) {
  std::vector<double> lc;
  const double m = weighted_log_components(g, y, s2, lc);
  if (!std::isfinite(m)) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& a = g.atoms()[i];
    const double score = -(y - a.mu) * g.j_count() / (a.sigma * a.sigma);
    acc += score * std::exp(lc[i] - m);
  }
  return acc * std::exp(m);
}

TailIntegrals log_tail_integrals(const MixtureAtom& atom, int j_count, double s2) {
  const double k = 0.5 * (j_count - 1);
  const double theta = atom.theta(k);
  const double log_gamma = gamma_log_pdf(s2, k, theta);
  return {std::log(theta) + log_gamma, std::log(kSqrtPi) + 0.5 * std::log(theta / k) + log_gamma};
}

TailIntegrals tail_integrals(const MixtureAtom& atom, int j_count, double s2) {
  const auto l = log_tail_integrals(atom, j_count, s2);
  return {std::exp(l.t0), std::exp(l.thalf)};
}

double log_likelihood(const DiscreteMixture& g, std::span<const SufficientStats> stats) {
  double total = 0.0;
  double comp = 0.0;
  std::vector<double> lc(g.size());
  for (const auto& u : stats) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& a = g.atoms()[i];
      lc[i] = std::log(a.weight) + component_log_density(a, u.j_count, u.y_bar, u.s2);
    }
    const double term = log_sum_exp(lc);
    if (!std::isfinite(term)) return kNegInf;
    // Neumaier summation
    const double t = total + term;
    comp += std::fabs(total) >= std::fabs(term) ? (total - t) + term : (term - t) + total;
    total = t;
  }
  return total + comp;
}

}  // namespace npeb
