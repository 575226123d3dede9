#include "npeb/risk_eval.hpp"

#include <cmath>
#include "json.hpp"
#include <sstream>

#include "npeb/errors.hpp"
#include "npeb/format.hpp"

namespace npeb {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
  if (a == 0) throw Error(ErrorCode::EmptyData, "loss over an empty set");
}

double sample_variance(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

double stable_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    const double t = sum + x;
    comp += std::fabs(sum) >= std::fabs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(v.size());
}

double mse_loss(std::span<const double> estimates, std::span<const double> truths) {
  check_lengths(estimates.size(), truths.size());
  std::vector<double> sq(estimates.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = estimates[i] - truths[i];
    sq[i] = d * d;
  }
  return stable_mean(sq);
}

double detection_loss(std::span<const double> estimates, std::span<const double> truths, double c) {
  check_lengths(estimates.size(), truths.size());
  std::vector<double> terms(estimates.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const bool est_below = estimates[i] <= c;
    const bool truth_below = truths[i] <= c;
    terms[i] = est_below != truth_below ? std::fabs(truths[i] - c) : 0.0;
  }
  return stable_mean(terms);
}

FlagResult flag_below_threshold(std::span<const UnitEstimates> estimates,
                                std::span<const double> values, double c) {
  if (estimates.size() != values.size()) {
    throw Error(ErrorCode::LengthMismatch, "flag_below_threshold: ids and values differ in length");
  }
  FlagResult out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] <= c) out.unit_ids.push_back(estimates[i].unit_id);
  }
  out.count = out.unit_ids.size();
  return out;
}

double relative_regret(std::span<const double> method_losses, std::span<const double> oracle_losses) {
  check_lengths(method_losses.size(), oracle_losses.size());
  const double oracle = stable_mean(oracle_losses);
  if (!(oracle > 0.0)) throw Error(ErrorCode::ZeroOracleLoss, "oracle loss is zero");
  return (stable_mean(method_losses) - oracle) / oracle;
}

double relative_regret_se(std::span<const double> method_losses,
                          std::span<const double> oracle_losses) {
  check_lengths(method_losses.size(), oracle_losses.size());
  const std::size_t r = method_losses.size();
  if (r < 2) return 0.0;
  const double m = stable_mean(method_losses);
  const double o = stable_mean(oracle_losses);
  if (!(o > 0.0)) throw Error(ErrorCode::ZeroOracleLoss, "oracle loss is zero");
  const double ratio = m / o;
  std::vector<double> lin(r);
  for (std::size_t i = 0; i < r; ++i) lin[i] = method_losses[i] - ratio * oracle_losses[i];
  const double var = sample_variance(lin, stable_mean(lin));
  return std::sqrt(var / static_cast<double>(r)) / o;
}

const MethodRegret* RegretReport::find(Method m) const {
  for (const auto& r : methods) {
    if (r.method == m) return &r;
  }
  return nullptr;
}

RegretReport make_regret_report(std::string target, std::string loss,
                                std::optional<double> threshold,
                                const std::vector<std::pair<Method, std::vector<double>>>& losses) {
  RegretReport report;
  report.target = std::move(target);
  report.loss = std::move(loss);
  report.threshold = threshold;
  const std::vector<double>* oracle = nullptr;
  for (const auto& [m, v] : losses) {
    if (m == Method::Oracle) oracle = &v;
  }
  if (oracle) {
    report.oracle_mean_loss = stable_mean(*oracle);
    if (!(*report.oracle_mean_loss > 0.0)) {
      throw Error(ErrorCode::ZeroOracleLoss, "oracle loss is zero for target " + report.target);
    }
  }
  for (const auto& [m, v] : losses) {
    MethodRegret mr;
    mr.method = m;
    mr.mean_loss = stable_mean(v);
    mr.loss_se = v.size() > 1 ? std::sqrt(sample_variance(v, mr.mean_loss) / v.size()) : 0.0;
    if (oracle) {
      mr.relative_regret = relative_regret(v, *oracle);
      mr.regret_se = relative_regret_se(v, *oracle);
    }
    report.rounds = static_cast<int>(v.size());
    report.methods.push_back(mr);
  }
  return report;
}

std::string regret_csv_header() {
  return "target,loss,c,method,n,J,rounds,seed,mean_loss,loss_se,regret,regret_se,dgp\n";
}

std::string regret_csv_rows(const RegretReport& report) {
  std::ostringstream os;
  for (const auto& m : report.methods) {
    os << report.target << ',' << report.loss << ','
       << (report.threshold ? format_double(*report.threshold) : "") << ','
       << method_name(m.method) << ',' << report.n << ',' << report.j_count << ','
       << report.rounds << ',' << report.seed << ',' << format_double(m.mean_loss) << ','
       << format_double(m.loss_se) << ','
       << (m.relative_regret ? format_double(*m.relative_regret) : "") << ','
       << format_double(m.regret_se) << ",\"" << report.dgp << "\"\n";
  }
  return os.str();
}

std::string regret_reports_json(std::span<const RegretReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j;
    j["target"] = r.target;
    j["loss"] = r.loss;
    j["c"] = r.threshold ? nlohmann::json(*r.threshold) : nlohmann::json(nullptr);
    j["oracle_mean_loss"] =
        r.oracle_mean_loss ? nlohmann::json(*r.oracle_mean_loss) : nlohmann::json(nullptr);
    j["n"] = r.n;
    j["J"] = r.j_count;
    j["rounds"] = r.rounds;
    j["seed"] = r.seed;
    j["dgp"] = r.dgp;
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : r.methods) {
      methods.push_back({{"method", method_name(m.method)},
                         {"mean_loss", m.mean_loss},
                         {"loss_se", m.loss_se},
                         {"regret", m.relative_regret ? nlohmann::json(*m.relative_regret)
                                                      : nlohmann::json(nullptr)},
                         {"regret_se", m.regret_se}});
    }
    j["methods"] = methods;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

}  // namespace npeb
