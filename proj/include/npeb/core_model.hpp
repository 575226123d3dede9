#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace npeb {

/// Raw outcomes for one unit (teacher, firm, ...). Identifiers are opaque.
struct UnitObservations {
  std::string unit_id;
  std::vector<double> values;
};

/// Gaussian/Gamma sufficient reduction of a unit's observations: the sample
/// mean, the unbiased sample variance and the count J, with k = (J - 1) / 2.
struct SufficientStats {
  std::string unit_id;
  double y_bar = 0.0;
  double s2 = 0.0;
  int j_count = 0;
  double k = 0.0;

  double s() const;
};

/// True unit parameters, only known in simulation.
struct UnitTruth {
  double mu = 0.0;
  double sigma = 1.0;

  double sigma2() const { return sigma * sigma; }
  double quantile(double alpha) const;
};

struct Dataset {
  std::vector<SufficientStats> units;
  std::optional<std::vector<UnitTruth>> truths;

  std::size_t size() const { return units.size(); }
};

/// Throws TooFewObservations when J <= 3 and DegenerateVariance when every
/// value is identical.
SufficientStats compute_sufficient_stats(const UnitObservations& obs);

/// Same as above for an anonymous span of values.
SufficientStats compute_sufficient_stats(std::string unit_id, std::span<const double> values);

/// Checks that unit ids are unique and (optionally) that every unit has the
/// same J. Throws InvalidArgument otherwise.
void validate_dataset(const Dataset& data, bool require_common_j);

}  // namespace npeb
