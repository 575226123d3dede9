#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npeb/core_model.hpp"
#include "npeb/npmle.hpp"
#include "npeb/oracle.hpp"
#include "npeb/posterior_estimators.hpp"

namespace npeb {

/// One row of the long input file: a single observation of a unit.
struct LongRecord {
  std::string unit_id;
  double outcome = 0.0;
  std::vector<double> covariates;
  /// Values of the group columns, same order as LongData::group_names.
  std::vector<std::string> groups;
};

struct LongData {
  std::vector<std::string> covariate_names;
  std::vector<std::string> group_names;
  std::vector<LongRecord> records;
};

/// Reads `unit_id,outcome[,more columns...]`. Columns named in group_columns
/// are kept as group keys, every other extra column is a numeric covariate.
LongData read_long_csv(std::istream& in, const std::vector<std::string>& group_columns = {});
LongData read_long_csv_file(const std::string& path,
                            const std::vector<std::string>& group_columns = {});
void write_long_csv(std::ostream& out, const LongData& data);

/// Outcome := (outcome - cell mean) / cell sd within each combination of the
/// group keys (sample sd). Throws InvalidArgument without group columns or on
/// a cell with fewer than two records or zero spread.
void standardize_within_groups(LongData& data);

struct PartialOutResult {
  std::vector<std::string> names;
  std::vector<double> beta;
  std::size_t records = 0;
  std::size_t units = 0;
  /// Share of within-unit outcome variation explained by the covariates.
  double within_r2 = 0.0;
};

/// Within-unit OLS of the outcome on the covariates; then
/// outcome := outcome - x' beta_hat on every record. Throws RankDeficient
/// naming the collinear columns and InsufficientWithinVariation when a unit
/// has a single record. Identically zero columns get beta = 0.
PartialOutResult partial_out_covariates(LongData& data);

/// Records grouped per unit in order of first appearance.
std::vector<UnitObservations> group_by_unit(const LongData& data);

/// Sufficient statistics for every unit; the unit id is added to errors.
std::vector<SufficientStats> stats_from_observations(std::span<const UnitObservations> units);

/// Inclusive J range.
struct JRange {
  int lo = 0;
  int hi = 0;
  std::string label() const;
};

/// Empty ranges: one bin per distinct J.
struct BinningRule {
  std::vector<JRange> ranges;
  std::size_t min_units = 50;
};

/// Parses "14-22,23-30" or single values such as "15".
std::vector<JRange> parse_j_ranges(const std::string& text);

struct PipelineConfig {
  SieveConfig sieve;
  EstimatorConfig estimator;
  std::vector<Method> methods = {Method::Het, Method::Hom, Method::Naive};
  BinningRule binning;
  bool standardize = false;
  std::vector<std::string> group_columns;
  /// Needed only when ORACLE is among the methods.
  std::optional<OracleSpec> oracle;
  int threads = 1;
};

struct UnitBin {
  std::string label;
  std::vector<std::size_t> members;
};

/// Units assigned to bins, in increasing J. Throws InvalidArgument for a
/// unit outside every range and BinTooSmall for an undersized bin.
std::vector<UnitBin> assign_bins(std::span<const SufficientStats> stats, const BinningRule& rule);

/// Runs every configured method separately inside each bin. Output order:
/// bin, then method, then unit order within the bin.
std::vector<UnitEstimates> bin_and_estimate(std::span<const SufficientStats> stats,
                                            const PipelineConfig& config);

/// unit_id,method,mu_hat,sigma_hat,sigma2_hat,q<100a>_hat...,truncated
void write_estimates_csv(std::ostream& out, std::span<const UnitEstimates> estimates,
                         std::span<const double> alpha_list);
std::vector<UnitEstimates> read_estimates_csv(std::istream& in);
std::string estimates_json(std::span<const UnitEstimates> estimates,
                           std::span<const double> alpha_list);

/// unit_id,mu,sigma
void write_truths_csv(std::ostream& out, std::span<const SufficientStats> units,
                      std::span<const UnitTruth> truths);
struct TruthTable {
  std::vector<std::string> unit_ids;
  std::vector<UnitTruth> truths;
};
TruthTable read_truths_csv(std::istream& in);

}  // namespace npeb
