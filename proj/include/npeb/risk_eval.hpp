#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npeb/posterior_estimators.hpp"

namespace npeb {

/// Mean squared error (1/n) sum (estimate_i - truth_i)^2.
double mse_loss(std::span<const double> estimates, std::span<const double> truths);

/// Mean over units of 1{misclassified relative to c} * |truth_i - c|, where a
/// unit is classified as below c when its value is <= c.
double detection_loss(std::span<const double> estimates, std::span<const double> truths, double c);

struct FlagResult {
  std::vector<std::string> unit_ids;
  std::size_t count = 0;
};

/// Units whose estimate is <= c, in input order.
FlagResult flag_below_threshold(std::span<const UnitEstimates> estimates,
                                std::span<const double> values, double c);

/// (mean(method) - mean(oracle)) / mean(oracle) across rounds.
double relative_regret(std::span<const double> method_losses, std::span<const double> oracle_losses);

/// Delta-method standard error of relative_regret across rounds (0 for one round).
double relative_regret_se(std::span<const double> method_losses,
                          std::span<const double> oracle_losses);

/// Compensated mean.
double stable_mean(std::span<const double> v);

struct MethodRegret {
  Method method = Method::Het;
  double mean_loss = 0.0;
  double loss_se = 0.0;
  std::optional<double> relative_regret;
  double regret_se = 0.0;
};

struct RegretReport {
  std::string target;
  /// "mse" or "detection".
  std::string loss = "mse";
  std::optional<double> threshold;
  std::optional<double> oracle_mean_loss;
  std::vector<MethodRegret> methods;
  std::size_t n = 0;
  int j_count = 0;
  int rounds = 0;
  std::uint64_t seed = 0;
  std::string dgp;

  const MethodRegret* find(Method m) const;
};

/// Builds a report from per-round losses. Methods listed without an ORACLE
/// entry get no relative regret. Throws ZeroOracleLoss when the oracle loss
/// averages to zero.
RegretReport make_regret_report(std::string target, std::string loss,
                                std::optional<double> threshold,
                                const std::vector<std::pair<Method, std::vector<double>>>& losses);

/// Long CSV: target,loss,c,method,n,J,rounds,seed,mean_loss,loss_se,regret,regret_se,dgp
std::string regret_csv_header();
std::string regret_csv_rows(const RegretReport& report);
std::string regret_reports_json(std::span<const RegretReport> reports);

}  // namespace npeb
