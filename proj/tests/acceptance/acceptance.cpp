#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "fixtures.hpp"
#include "mc_oracle.hpp"
#include "npeb/cli.hpp"
#include "npeb/mixture_density.hpp"
#include "npeb/oracle.hpp"
#include "npeb/pipeline.hpp"
#include "npeb/posterior_estimators.hpp"
#include "npeb/simulation.hpp"
#include "npeb/special_functions.hpp"

namespace {

using namespace npeb;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("violated: ") + what;
    }
  }
  void note(const std::string& text) { detail += (detail.empty() ? "" : "; ") + text; }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

int failures = 0;

void run_criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.note(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%.2f s) %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL",
              secs, o.detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Outcome point_mass() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.2, 1.5);
  std::uniform_int_distribution<int> jd(4, 60);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const MixtureAtom a{1.0, u(rng), pos(rng)};
    const DiscreteMixture g({a}, jd(rng));
    const double y = a.mu + 0.3 * u(rng);
    const double s2 = a.sigma * a.sigma * pos(rng);
    const auto pm = tweedie_moments(y, s2, g, 0.0);
    worst = std::max({worst, std::abs(pm.mu - a.mu), std::abs(pm.sigma - a.sigma),
                      std::abs(pm.sigma2 - a.sigma * a.sigma),
                      std::abs(estimate_quantile(y, s2, 0.1, g, 0.0) -
                               (a.mu + a.sigma * normal_quantile(0.1)))});
  }
  Outcome o;
  const double secs = seconds_since(t0);
  o.note("max_abs_err=" + num(worst));
  o.require(worst <= 1e-10, "max_abs_err <= 1e-10");
  o.require(secs < 1.0, "runtime < 1 s");
  return o;
}

Outcome tweedie_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> count(2, 10);
  std::uniform_int_distribution<int> jd(4, 40);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto atoms = testing::random_atoms(rng, count(rng));
    const int j = jd(rng);
    const DiscreteMixture g(atoms, j);
    for (int p = 0; p < 20; ++p) {
      const auto& src = atoms[p % atoms.size()];
      std::gamma_distribution<double> chi(g.k(), src.theta(g.k()));
      const double y = src.mu + z(rng) * src.sigma / std::sqrt(j);
      const double s2 = chi(rng);
      const auto w = testing::brute_force_posterior(atoms, j, y, s2);
      double mu = 0, sigma = 0, sigma2 = 0;
      for (std::size_t m = 0; m < atoms.size(); ++m) {
        mu += w[m] * atoms[m].mu;
        sigma += w[m] * atoms[m].sigma;
        sigma2 += w[m] * atoms[m].sigma * atoms[m].sigma;
      }
      worst = std::max({worst, std::abs(estimate_mu(y, s2, g, 0.0) - mu),
                        std::abs(estimate_sigma(y, s2, g, 0.0) - sigma),
                        std::abs(estimate_sigma2(y, s2, g, 0.0) - sigma2),
                        std::abs(estimate_quantile(y, s2, 0.1, g, 0.0) -
                                 (mu + normal_quantile(0.1) * sigma))});
    }
  }
  Outcome o;
  const double secs = seconds_since(t0);
  o.note("max_abs_err=" + num(worst));
  o.require(worst <= 1e-9, "max_abs_err <= 1e-9");
  o.require(secs < 5.0, "runtime < 5 s");
  return o;
}

double richardson_dy(const DiscreteMixture& g, double y, double s2, double h) {
  auto d = [&](double step) {
    return (mixture_density(g, y + step, s2) - mixture_density(g, y - step, s2)) / (2 * step);
  };
  return (4 * d(h / 2) - d(h)) / 3;
}

Outcome derivative_check() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int j = 4 + i % 25;
    const DiscreteMixture g(testing::random_atoms(rng, 1 + i % 6), j);
    const auto& src = g.atoms()[i % g.size()];
    std::gamma_distribution<double> chi(g.k(), src.theta(g.k()));
    const double y = src.mu + 1.5 * z(rng) * src.sigma / std::sqrt(j);
    const double s2 = chi(rng);
    const double fd = richardson_dy(g, y, s2, 1e-3 * 0.3 / std::sqrt(j));
    worst = std::max(worst, std::abs(mixture_density_dy(g, y, s2) - fd) / std::abs(fd));
  }
  Outcome o;
  o.note("max_rel_err=" + num(worst));
  o.require(worst <= 1e-6, "max_rel_err <= 1e-6");
  return o;
}

Outcome tail_integrals_check() {
  std::mt19937_64 rng(1004);
  std::uniform_int_distribution<int> jd(4, 40);
  std::uniform_real_distribution<double> theta_d(0.005, 0.3);
  std::uniform_real_distribution<double> ratio(0.2, 2.0);
  boost::math::quadrature::exp_sinh<double> rule;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int j = jd(rng);
    const double k = 0.5 * (j - 1);
    const double theta = theta_d(rng);
    const double s2 = ratio(rng) * k * theta;
    auto body = [&](double t) {
      return std::exp((k - 1) * std::log(s2 / t) + gamma_log_pdf(t, k, theta));
    };
    const double t0 = rule.integrate([&](double v) { return body(s2 + v); }, 1e-15);
    const double thalf =
        rule.integrate([&](double u) { return 2.0 / std::sqrt(k) * body(s2 + u * u); }, 1e-15);
    const auto t = tail_integrals(MixtureAtom{1.0, 0.0, std::sqrt(k * theta)}, j, s2);
    worst = std::max({worst, std::abs(t.t0 / t0 - 1), std::abs(t.thalf / thalf - 1)});
  }
  Outcome o;
  o.note("max_rel_err=" + num(worst));
  o.require(worst <= 1e-7, "max_rel_err <= 1e-7");
  return o;
}

Outcome oracle_cross_check() {
  const auto spec = calibrate_dgp(MomentTargets{});
  const CopulaOracle gh(spec, 40, 40);
  const CopulaOracle fine(spec, 80, 80);
  const auto draws = testing::draw_copula_prior(spec.alpha, spec.nu, spec.kappa, spec.lambda,
                                                spec.rho_copula, 1000000, 1005);
  const double mu_floor = std::sqrt(spec.nu);
  double worst_mc = 0.0, worst_nodes = 0.0;
  for (const auto& pt : testing::oracle_points()) {
    const auto q = gh.posterior(pt.y, pt.s2, 15);
    const auto f = fine.posterior(pt.y, pt.s2, 15);
    const auto mc = testing::mc_posterior(draws, pt.y, pt.s2, 15);
    worst_mc = std::max({worst_mc, std::abs(q.mu - mc.mu) / std::max(std::abs(mc.mu), mu_floor),
                         std::abs(q.sigma / mc.sigma - 1), std::abs(q.sigma2 / mc.sigma2 - 1)});
    worst_nodes =
        std::max({worst_nodes, std::abs(q.mu - f.mu) / std::max(std::abs(f.mu), mu_floor),
                  std::abs(q.sigma / f.sigma - 1), std::abs(q.sigma2 / f.sigma2 - 1)});
  }
  Outcome o;
  o.note("max_rel_vs_mc=" + num(worst_mc) + " max_rel_doubling=" + num(worst_nodes));
  o.require(worst_mc <= 1e-3, "GH vs MC within 1e-3");
  o.require(worst_nodes <= 1e-4, "doubling nodes changes <= 1e-4");
  return o;
}

Outcome calibration() {
  const auto t0 = Clock::now();
  const MomentTargets targets;
  const auto spec = calibrate_dgp(targets);
  Outcome o;
  o.note("lambda=" + num(spec.lambda) + " kappa=" + num(spec.kappa));
  o.require(std::abs(spec.lambda - 0.0088462) < 1e-7, "lambda ~ 0.0088462");
  o.require(std::abs(spec.kappa - 29.391) < 1e-3, "kappa ~ 29.391");

  const auto t = draw_parameters(spec, 1000000, 1006);
  const double n = static_cast<double>(t.size());
  double a = 0, b = 0;
  for (const auto& u : t) {
    a += u.mu;
    b += u.sigma2();
  }
  a /= n;
  b /= n;
  double vaa = 0, vbb = 0, vab = 0, m4a = 0, m4b = 0;
  for (const auto& u : t) {
    const double da = u.mu - a, db = u.sigma2() - b;
    vaa += da * da;
    vbb += db * db;
    vab += da * db;
    m4a += std::pow(da, 4);
    m4b += std::pow(db, 4);
  }
  vaa /= n - 1;
  vbb /= n - 1;
  vab /= n - 1;
  m4a /= n;
  m4b /= n;
  const double r = vab / std::sqrt(vaa * vbb);
  const struct {
    const char* name;
    double value, target, se;
  } checks[] = {
      {"E[mu]", a, targets.e_mu, std::sqrt(vaa / n)},
      {"V[mu]", vaa, targets.v_mu, std::sqrt((m4a - vaa * vaa) / n)},
      {"E[sigma2]", b, targets.e_sigma2, std::sqrt(vbb / n)},
      {"V[sigma2]", vbb, targets.v_sigma2, std::sqrt((m4b - vbb * vbb) / n)},
      {"cor", r, targets.cor_mu_sigma2, (1 - r * r) / std::sqrt(n)},
  };
  for (const auto& c : checks) {
    const double zscore = (c.value - c.target) / c.se;
    o.note(std::string(c.name) + "=" + num(c.value) + " z=" + num(zscore));
    o.require(std::abs(zscore) <= 3.0, std::string(c.name) + " within 3 SE");
  }
  o.require(seconds_since(t0) < 30.0, "runtime < 30 s");
  return o;
}

ExperimentSpec table_spec(std::size_t n) {
  ExperimentSpec spec;
  spec.n_list = {n};
  spec.rounds = 100;
  spec.methods = {Method::Het, Method::Hom, Method::Naive};
  spec.detect_mu = {-0.3, -0.2, -0.1, 0.0};
  spec.detect_q = {-1.0, -0.9, -0.8, -0.7};
  spec.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return spec;
}

double regret(const RegretReport* r, Method m) {
  if (!r || !r->find(m) || !r->find(m)->relative_regret) return NAN;
  return *r->find(m)->relative_regret;
}

bool in(double v, double lo, double hi) { return v >= lo && v <= hi; }

struct SimulationRuns {
  ExperimentResult small;
  ExperimentResult large;
  double large_seconds = 0.0;
};

Outcome mu_and_quantile_regrets(const SimulationRuns& s) {
  Outcome o;
  const auto* m200 = s.small.find_mse(200, "mu");
  const auto* m4000 = s.large.find_mse(4000, "mu");
  const auto* q4000 = s.large.find_mse(4000, "q10");
  const double h200 = regret(m200, Method::Het), n200 = regret(m200, Method::Naive);
  const double h4 = regret(m4000, Method::Het), o4 = regret(m4000, Method::Hom),
               n4 = regret(m4000, Method::Naive);
  const double qh = regret(q4000, Method::Het), qo = regret(q4000, Method::Hom),
               qn = regret(q4000, Method::Naive);
  o.note("n200 mu HET=" + num(h200) + " NAIVE=" + num(n200));
  o.note("n4000 mu HET=" + num(h4) + " HOM=" + num(o4) + " NAIVE=" + num(n4));
  o.note("n4000 q10 HET=" + num(qh) + " HOM=" + num(qo) + " NAIVE=" + num(qn));
  o.note("n4000 seconds=" + num(s.large_seconds));
  o.require(in(h200, 0.05, 0.20), "n=200 mu HET in [0.05, 0.20]");
  o.require(in(n200, 0.8, 1.2), "n=200 mu NAIVE in [0.8, 1.2]");
  o.require(h4 <= 0.03, "n=4000 mu HET <= 0.03");
  o.require(in(o4, 0.015, 0.05), "n=4000 mu HOM in [0.015, 0.05]");
  o.require(in(n4, 0.85, 1.1), "n=4000 mu NAIVE in [0.85, 1.1]");
  o.require(qh < qo && qo < qn, "n=4000 q10 HET < HOM < NAIVE");
  o.require(qo >= 3 * qh, "n=4000 q10 HOM >= 3 x HET");
  o.require(s.large_seconds <= 1800.0, "n=4000 cell <= 30 min");
  return o;
}

Outcome sigma2_regrets(const SimulationRuns& s) {
  Outcome o;
  const auto* r = s.large.find_mse(4000, "sigma2");
  const double h = regret(r, Method::Het), m = regret(r, Method::Hom), n = regret(r, Method::Naive);
  o.note("n4000 sigma2 HET=" + num(h) + " HOM=" + num(m) + " NAIVE=" + num(n));
  o.require(m >= 5 * h, "HOM >= 5 x HET");
  o.require(n >= 2.0, "NAIVE >= 2.0");
  return o;
}

Outcome detection_regrets(const SimulationRuns& s) {
  Outcome o;
  const auto check = [&](const std::string& target, const std::vector<double>& grid) {
    for (double c : grid) {
      const auto* r = s.large.find_detection(4000, target, c);
      const double h = regret(r, Method::Het), n = regret(r, Method::Naive);
      o.note(target + "@" + num(c) + " HET=" + num(h) + " NAIVE=" + num(n));
      o.require(n > h, target + " NAIVE > HET at c=" + num(c));
    }
  };
  check("mu", {-0.3, -0.2, -0.1, 0.0});
  check("q10", {-1.0, -0.9, -0.8, -0.7});
  return o;
}

Outcome em_contract(const SimulationRuns& s) {
  Outcome o;
  const double step = std::min(s.small.diagnostics.min_em_step, s.large.diagnostics.min_em_step);
  o.note("min_em_step=" + num(step) + " fits=" +
         std::to_string(s.small.diagnostics.fits + s.large.diagnostics.fits));
  o.require(step >= -1e-12, "every EM step >= -1e-12");
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome pipeline_check() {
  Outcome o;
  const auto truths = draw_parameters(calibrate_dgp(MomentTargets{}), 500, 1011);
  const auto drawn = draw_observations(truths, 15, 1012);
  std::mt19937_64 rng(1013);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::vector<double> beta0 = {0.5, -0.2};
  LongData data;
  data.covariate_names = {"x1", "x2"};
  for (const auto& u : drawn.observations) {
    for (double y : u.values) {
      LongRecord r{u.unit_id, y, {z(rng), z(rng)}, {}};
      r.outcome += beta0[0] * r.covariates[0] + beta0[1] * r.covariates[1];
      data.records.push_back(std::move(r));
    }
  }
  const auto fit = partial_out_covariates(data);
  const double err = std::max(std::abs(fit.beta[0] - beta0[0]), std::abs(fit.beta[1] - beta0[1]));
  o.note("beta=(" + num(fit.beta[0]) + "," + num(fit.beta[1]) + ") max_err=" + num(err));
  o.require(err < 0.02, "||beta_hat - beta0||_inf < 0.02");

  const auto root = std::filesystem::temp_directory_path() /
                    ("npeb_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(root);
  std::vector<std::string> outputs;
  for (const char* tag : {"a", "b"}) {
    const auto dir = (root / tag).string();
    std::ostringstream out, err_text;
    int code = cli_main({"--seed", "2024", "--output-dir", dir, "generate", "--n", "300", "--J",
                         "15", "--beta", "0.5,-0.2"},
                        out, err_text);
    code |= cli_main({"--output-dir", dir, "estimate", "--input", dir + "/data.csv"}, out, err_text);
    code |= cli_main({"--output-dir", dir, "regret", "--estimates", dir + "/estimates.csv",
                      "--truths", dir + "/truths.csv"},
                     out, err_text);
    o.require(code == 0, std::string("CLI run ") + tag + " exits 0");
    outputs.push_back(slurp(root / tag / "data.csv") + slurp(root / tag / "estimates.csv") +
                      slurp(root / tag / "regret.csv"));
  }
  std::filesystem::remove_all(root);
  o.note("cli_bytes=" + std::to_string(outputs[0].size()));
  o.require(!outputs[0].empty() && outputs[0] == outputs[1], "CLI outputs byte-identical");
  return o;
}

}  // namespace

int main() {
  run_criterion(1, "point_mass_fixed_points", point_mass);
  run_criterion(2, "tweedie_equals_posterior_weights", tweedie_equivalence);
  run_criterion(3, "density_derivative", derivative_check);
  run_criterion(4, "closed_form_tail_integrals", tail_integrals_check);
  run_criterion(5, "copula_oracle_cross_check", oracle_cross_check);
  run_criterion(6, "calibration_round_trip", calibration);

  SimulationRuns sims;
  bool sims_ok = true;
  std::string sims_error;
  try {
    sims.small = run_experiment(table_spec(200));
    const auto t0 = Clock::now();
    sims.large = run_experiment(table_spec(4000));
    sims.large_seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    sims_ok = false;
    sims_error = e.what();
  }
  const auto with_sims = [&](Outcome (*fn)(const SimulationRuns&)) {
    return [&, fn] {
      if (!sims_ok) throw std::runtime_error("simulation failed: " + sims_error);
      return fn(sims);
    };
  };
  run_criterion(7, "mu_and_quantile_regrets", with_sims(mu_and_quantile_regrets));
  run_criterion(8, "sigma2_regrets", with_sims(sigma2_regrets));
  run_criterion(9, "detection_naive_above_het", with_sims(detection_regrets));
  run_criterion(10, "em_monotone", with_sims(em_contract));
  run_criterion(11, "pipeline_residualization_and_cli_determinism", pipeline_check);

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
