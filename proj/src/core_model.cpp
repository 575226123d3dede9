#include "npeb/core_model.hpp"

#include <cmath>
#include <unordered_set>

#include "npeb/errors.hpp"
#include "npeb/special_functions.hpp"

namespace npeb {

double SufficientStats::s() const { return std::sqrt(s2); }

double UnitTruth::quantile(double alpha) const { return mu + sigma * normal_quantile(alpha); }

SufficientStats compute_sufficient_stats(std::string unit_id, std::span<const double> values) {
  const std::size_t j = values.size();
  if (j <= 3) {
    throw Error(ErrorCode::TooFewObservations,
                "unit '" + unit_id + "' has " + std::to_string(j) + " observations; need at least 4");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::InvalidArgument, "unit '" + unit_id + "' has a non-finite observation");
    }
  }
  // two-pass with the rounding-error correction term
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(j);
  double ss = 0.0;
  double resid_sum = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
    resid_sum += d;
  }
  ss -= resid_sum * resid_sum / static_cast<double>(j);
  if (!(ss > 0.0)) {
    throw Error(ErrorCode::DegenerateVariance, "unit '" + unit_id + "' has zero sample variance");
  }

  SufficientStats out;
  out.unit_id = std::move(unit_id);
  out.y_bar = mean;
  out.s2 = ss / static_cast<double>(j - 1);
  out.j_count = static_cast<int>(j);
  out.k = 0.5 * static_cast<double>(j - 1);
  return out;
}

SufficientStats compute_sufficient_stats(const UnitObservations& obs) {
  return compute_sufficient_stats(obs.unit_id, obs.values);
}

void validate_dataset(const Dataset& data, bool require_common_j) {
  std::unordered_set<std::string> seen;
  seen.reserve(data.units.size());
  for (const auto& u : data.units) {
    if (!seen.insert(u.unit_id).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate unit id '" + u.unit_id + "'");
    }
    if (require_common_j && u.j_count != data.units.front().j_count) {
      throw Error(ErrorCode::InvalidArgument,
                  "units have different observation counts; bin by J first");
    }
  }
  if (data.truths && data.truths->size() != data.units.size()) {
    throw Error(ErrorCode::LengthMismatch, "truths and units differ in length");
  }
}

}  // namespace npeb
