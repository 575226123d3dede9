#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "npeb/simulation.hpp"
#include "test_util.hpp"

namespace npeb {
namespace {

using testing::expect_error;

struct Moments {
  double mean_mu, var_mu, mean_s2, var_s2, cor;
  double se_mean_mu, se_var_mu, se_mean_s2, se_var_s2, se_cor;
};

Moments sample_moments(const std::vector<UnitTruth>& t) {
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
  return {a,
          vaa,
          b,
          vbb,
          r,
          std::sqrt(vaa / n),
          std::sqrt((m4a - vaa * vaa) / n),
          std::sqrt(vbb / n),
          std::sqrt((m4b - vbb * vbb) / n),
          (1 - r * r) / std::sqrt(n)};
}

TEST(Calibration, ForcedGammaParameters) {
  const auto spec = calibrate_dgp(MomentTargets{});
  EXPECT_NEAR(spec.lambda, 0.0088462, 1e-7);
  EXPECT_NEAR(spec.kappa, 29.391, 1e-3);
  EXPECT_NEAR(spec.kappa * spec.lambda, 0.26, 1e-15);
  EXPECT_NEAR(spec.kappa * spec.lambda * spec.lambda, 0.0023, 1e-15);
  EXPECT_EQ(spec.alpha, 0.0);
  EXPECT_EQ(spec.nu, 0.018);
  EXPECT_LT(spec.rho_copula, -0.38);
}

TEST(Calibration, ZeroCorrelationAndInfeasible) {
  MomentTargets t;
  t.cor_mu_sigma2 = 0.0;
  EXPECT_EQ(calibrate_dgp(t).rho_copula, 0.0);
  t.cor_mu_sigma2 = 0.999;
  expect_error(ErrorCode::InfeasibleCorrelation, [&] { calibrate_dgp(t); });
  t.cor_mu_sigma2 = 0.2;
  t.v_mu = -1.0;
  expect_error(ErrorCode::InvalidArgument, [&] { calibrate_dgp(t); });
}

TEST(Calibration, RoundTripReproducesTargets) {
  const MomentTargets targets;
  const auto truths = draw_parameters(calibrate_dgp(targets), 1000000, 401);
  const auto m = sample_moments(truths);
  EXPECT_NEAR(m.mean_mu, targets.e_mu, 3 * m.se_mean_mu);
  EXPECT_NEAR(m.var_mu, targets.v_mu, 3 * m.se_var_mu);
  EXPECT_NEAR(m.mean_s2, targets.e_sigma2, 3 * m.se_mean_s2);
  EXPECT_NEAR(m.var_s2, targets.v_sigma2, 3 * m.se_var_s2);
  EXPECT_NEAR(m.cor, targets.cor_mu_sigma2, 3 * m.se_cor);
}

TEST(DrawParameters, IndependentCopulaIsUncorrelated) {
  MomentTargets t;
  t.cor_mu_sigma2 = 0.0;
  const auto truths = draw_parameters(calibrate_dgp(t), 1000000, 402);
  EXPECT_LT(std::abs(sample_moments(truths).cor), 0.01);
}

TEST(DrawParameters, DegenerateLocation) {
  DgpSpec spec = calibrate_dgp(MomentTargets{});
  spec.alpha = 0.3;
  spec.nu = 1e-300;
  for (const auto& t : draw_parameters(spec, 100, 403)) EXPECT_EQ(t.mu, 0.3);
}

TEST(DrawParameters, SeedDeterminism) {
  const auto spec = calibrate_dgp(MomentTargets{});
  const auto a = draw_parameters(spec, 500, 404);
  const auto b = draw_parameters(spec, 500, 404);
  const auto c = draw_parameters(spec, 500, 405);
  int same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mu, b[i].mu);
    EXPECT_EQ(a[i].sigma, b[i].sigma);
    same += a[i].mu == c[i].mu;
  }
  EXPECT_EQ(same, 0);
  const auto prefix = draw_parameters(spec, 100, 404);
  for (std::size_t i = 0; i < prefix.size(); ++i) EXPECT_EQ(prefix[i].mu, a[i].mu);
}

TEST(RandomStreams, KeyedAndOrderFree) {
  RandomStream a(1, 2, 3);
  RandomStream b(1, 2, 4);
  RandomStream c(1, 2, 3);
  const double x = a.normal();
  EXPECT_NE(x, b.normal());
  EXPECT_EQ(x, c.normal());
  EXPECT_NE(mix_seed(1), mix_seed(2));
}

TEST(DrawObservations, StatsMatchRawValues) {
  const auto spec = calibrate_dgp(MomentTargets{});
  const auto truths = draw_parameters(spec, 50, 406);
  const auto drawn = draw_observations(truths, 15, 407);
  ASSERT_EQ(drawn.observations.size(), 50u);
  ASSERT_TRUE(drawn.dataset.truths.has_value());
  for (std::size_t i = 0; i < 50; ++i) {
    const auto s = compute_sufficient_stats(drawn.observations[i]);
    EXPECT_EQ(s.unit_id, "u" + std::to_string(i));
    EXPECT_EQ(drawn.dataset.units[i].y_bar, s.y_bar);
    EXPECT_EQ(drawn.dataset.units[i].s2, s.s2);
    EXPECT_EQ(drawn.dataset.units[i].j_count, 15);
  }
  expect_error(ErrorCode::TooFewObservations, [&] { draw_observations(truths, 3, 1); });
}

TEST(DrawObservations, TinySigmaPinsTheMean) {
  const std::vector<UnitTruth> truths(10, UnitTruth{0.7, 1e-9});
  for (const auto& u : draw_observations(truths, 15, 408).dataset.units) {
    EXPECT_NEAR(u.y_bar, 0.7, 1e-8);
  }
}

TEST(DrawObservations, VarianceIsUnbiased) {
  const std::vector<UnitTruth> truths(100000, UnitTruth{0.0, std::sqrt(0.26)});
  const auto units = draw_observations(truths, 15, 409).dataset.units;
  double m = 0, m2 = 0;
  for (const auto& u : units) {
    m += u.s2;
    m2 += u.s2 * u.s2;
  }
  m /= units.size();
  m2 /= units.size();
  const double se = std::sqrt((m2 - m * m) / units.size());
  EXPECT_NEAR(m, 0.26, 3 * se);
}

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.n_list = {120};
  spec.rounds = 4;
  spec.seed = 99;
  spec.detect_mu = {-0.1, 0.0};
  spec.detect_q = {-0.8};
  return spec;
}

TEST(RunExperiment, OracleOnlyHasZeroRegret) {
  auto spec = small_spec();
  spec.rounds = 1;
  spec.methods = {Method::Oracle};
  const auto r = run_experiment(spec);
  ASSERT_EQ(r.mse.size(), 4u);
  for (const auto& rep : r.mse) {
    ASSERT_EQ(rep.methods.size(), 1u);
    EXPECT_EQ(*rep.methods[0].relative_regret, 0.0);
  }
}

TEST(RunExperiment, DeterministicAcrossThreadCounts) {
  auto spec = small_spec();
  const auto a = run_experiment(spec);
  spec.threads = 3;
  const auto b = run_experiment(spec);
  ASSERT_EQ(a.mse.size(), b.mse.size());
  for (std::size_t i = 0; i < a.mse.size(); ++i) {
    EXPECT_EQ(regret_csv_rows(a.mse[i]), regret_csv_rows(b.mse[i]));
  }
  ASSERT_EQ(a.detection.size(), b.detection.size());
  for (std::size_t i = 0; i < a.detection.size(); ++i) {
    EXPECT_EQ(regret_csv_rows(a.detection[i]), regret_csv_rows(b.detection[i]));
  }
  EXPECT_EQ(a.diagnostics.min_em_step, b.diagnostics.min_em_step);
}

TEST(RunExperiment, ReportsEveryCellAndOracleIsMinimal) {
  auto spec = small_spec();
  spec.rounds = 10;
  spec.n_list = {200};
  const auto r = run_experiment(spec);
  EXPECT_EQ(r.detection.size(), 3u);
  ASSERT_NE(r.find_detection(200, "q10", -0.8), nullptr);
  ASSERT_NE(r.find_detection(200, "mu", 0.0), nullptr);
  EXPECT_EQ(r.find_detection(200, "mu", 0.5), nullptr);
  for (const char* t : {"mu", "sigma", "sigma2", "q10"}) {
    const auto* rep = r.find_mse(200, t);
    ASSERT_NE(rep, nullptr) << t;
    EXPECT_EQ(rep->rounds, 10);
    EXPECT_EQ(rep->methods.size(), 4u);
    for (const auto& m : rep->methods) EXPECT_GE(m.mean_loss, *rep->oracle_mean_loss) << t;
    EXPECT_LT(*rep->find(Method::Het)->relative_regret, *rep->find(Method::Naive)->relative_regret);
  }
  EXPECT_GE(r.diagnostics.min_em_step, -1e-12);
  EXPECT_EQ(r.diagnostics.fits, 10u * 2 * 201);
}

TEST(ExperimentSpec, Validation) {
  auto spec = small_spec();
  spec.rounds = 0;
  expect_error(ErrorCode::InvalidArgument, [&] { spec.validate(); });
  spec = small_spec();
  spec.j_count = 3;
  expect_error(ErrorCode::InvalidArgument, [&] { spec.validate(); });
  spec = small_spec();
  spec.n_list = {1};
  expect_error(ErrorCode::InvalidArgument, [&] { spec.validate(); });
  spec = small_spec();
  spec.alphas = {0.1, 0.9};
  EXPECT_EQ(spec.targets().size(), 5u);
  EXPECT_EQ(spec.targets().back().name(), "q90");
}

}  // namespace
}  // namespace npeb
