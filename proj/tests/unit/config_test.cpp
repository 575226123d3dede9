#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "npeb/config.hpp"
#include "test_util.hpp"

namespace npeb {
namespace {

using testing::expect_error;

ConfigValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

TEST(ParseConfig, SectionsCommentsAndQuotes) {
  const auto v = parse(
      "# leading comment\n"
      "n = [200, 4000]   # trailing\n"
      "\n"
      "[moments]\n"
      "cor = -0.3\n"
      "[pipeline]\n"
      "group_columns = \"school # a\"\n");
  ASSERT_EQ(v.entries.size(), 3u);
  EXPECT_EQ(v.entries[0], (std::pair<std::string, std::string>{"n", "200, 4000"}));
  EXPECT_EQ(v.entries[1].first, "moments.cor");
  EXPECT_EQ(v.entries[2].first, "pipeline.group_columns");
  EXPECT_EQ(v.entries[2].second, "school # a");
  expect_error(ErrorCode::ParseError, [] { parse("no equals sign\n"); });
  expect_error(ErrorCode::ParseError, [] { parse(" = 3\n"); });
}

TEST(ApplyConfig, ExperimentKeys) {
  ExperimentSpec spec;
  apply_config(parse("n = 200, 4000\nrounds = 7\nJ = 9\nseed = 5\nmethods = HET, NAIVE\n"
                     "alphas = 0.1, 0.9\ndetect_mu = -0.3, 0\ndetect_q = -1\noracle_nodes = 30\n"
                     "[moments]\ncor = 0\n"),
               &spec, nullptr);
  EXPECT_EQ(spec.n_list, (std::vector<std::size_t>{200, 4000}));
  EXPECT_EQ(spec.rounds, 7);
  EXPECT_EQ(spec.j_count, 9);
  EXPECT_EQ(spec.seed, 5u);
  EXPECT_EQ(spec.methods, (std::vector<Method>{Method::Het, Method::Naive}));
  EXPECT_EQ(spec.alphas, (std::vector<double>{0.1, 0.9}));
  EXPECT_EQ(spec.detect_mu, (std::vector<double>{-0.3, 0.0}));
  EXPECT_EQ(spec.oracle_nodes, 30);
  EXPECT_EQ(std::get<MomentTargets>(spec.dgp).cor_mu_sigma2, 0.0);
  EXPECT_EQ(spec.resolved_dgp().rho_copula, 0.0);
}

TEST(ApplyConfig, SharedKeysReachBothTargets) {
  ExperimentSpec spec;
  PipelineConfig cfg;
  apply_config(parse("threads = 3\nalphas = 0.25\n[sieve]\norder = 16\nsigma_lower = 0.05\n"
                     "free_support = false\nem_tol = 1e-6\nmax_em_iters = 99\nloo_max_iters = 7\n"
                     "[estimator]\nrho = 0.01\n"),
               &spec, &cfg);
  for (const SieveConfig* s : {&spec.sieve, &cfg.sieve}) {
    EXPECT_EQ(s->order_rule(1000), 16u);
    EXPECT_EQ(*s->sigma_lower, 0.05);
    EXPECT_FALSE(s->free_support);
    EXPECT_EQ(s->em_tol, 1e-6);
    EXPECT_EQ(s->max_em_iters, 99);
    EXPECT_EQ(s->loo_max_iters, 7);
  }
  EXPECT_EQ(*spec.estimator.rho, 0.01);
  EXPECT_EQ(*cfg.estimator.rho, 0.01);
  EXPECT_EQ(spec.estimator.alpha_list, (std::vector<double>{0.25}));
  EXPECT_EQ(cfg.estimator.alpha_list, (std::vector<double>{0.25}));
  EXPECT_EQ(spec.threads, 3);
  EXPECT_EQ(cfg.threads, 3);
}

TEST(ApplyConfig, PipelineKeysAndOracle) {
  PipelineConfig cfg;
  apply_config(parse("[pipeline]\nbins = 14-22\nmin_bin_units = 20\nstandardize = yes\n"
                     "group_columns = school, year\n[dgp]\nalpha = 0.1\nnu = 0.02\nkappa = 30\n"
                     "lambda = 0.01\nrho = -0.2\n"),
               nullptr, &cfg);
  ASSERT_EQ(cfg.binning.ranges.size(), 1u);
  EXPECT_EQ(cfg.binning.ranges[0].hi, 22);
  EXPECT_EQ(cfg.binning.min_units, 20u);
  EXPECT_TRUE(cfg.standardize);
  EXPECT_EQ(cfg.group_columns, (std::vector<std::string>{"school", "year"}));
  ASSERT_TRUE(cfg.oracle.has_value());
  EXPECT_EQ(std::get<DgpSpec>(cfg.oracle->prior).kappa, 30.0);
}

TEST(ApplyConfig, Errors) {
  ExperimentSpec spec;
  PipelineConfig cfg;
  const auto bad = [&](const std::string& text) {
    expect_error(ErrorCode::ParseError, [&] { apply_config(parse(text), &spec, &cfg); });
  };
  bad("bogus = 1\n");
  bad("[moments]\nskew = 1\n");
  bad("[dgp]\nshape = 1\n");
  bad("[moments]\ncor = 0.1\n[dgp]\nalpha = 0\n");
  bad("rounds = 0\n");
  bad("n = 1\n");
  bad("n = 2.5\n");
  bad("seed = -1\n");
  bad("methods = HET, MAGIC\n");
  bad("[sieve]\nfree_support = maybe\n");
  bad("[sieve]\nem_tol = 0\n");
  bad("[estimator]\nrho = -1\n");
}

TEST(ConfigKeys, EveryDocumentedKeyIsAccepted) {
  const std::map<std::string, std::string> samples = {
      {"n", "200"}, {"J", "15"}, {"rounds", "2"}, {"seed", "1"}, {"threads", "1"},
      {"methods", "HET"}, {"alphas", "0.1"}, {"detect_mu", "0"}, {"detect_q", "-1"},
      {"oracle_nodes", "20"}, {"sieve.order", "9"}, {"sieve.sigma_lower", "0.1"},
      {"sieve.max_em_iters", "10"}, {"sieve.em_tol", "1e-6"}, {"sieve.loo_max_iters", "5"},
      {"sieve.free_support", "true"}, {"estimator.rho", "0.01"}, {"pipeline.bins", "14-22"},
      {"pipeline.min_bin_units", "10"}, {"pipeline.standardize", "false"},
      {"pipeline.group_columns", "g"}};
  for (const auto& [key, help] : config_keys()) {
    EXPECT_FALSE(help.empty()) << key;
    std::string value = "0.1";
    if (const auto it = samples.find(key); it != samples.end()) value = it->second;
    if (key == "dgp.nu" || key == "dgp.kappa" || key == "dgp.lambda" || key == "moments.v_mu" ||
        key == "moments.e_sigma2" || key == "moments.v_sigma2") {
      value = "0.5";
    }
    ExperimentSpec spec;
    PipelineConfig cfg;
    EXPECT_NO_THROW(apply_config(ConfigValues{{{key, value}}}, &spec, &cfg)) << key;
  }
}

}  // namespace
}  // namespace npeb
