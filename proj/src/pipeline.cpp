#include "npeb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>

#include "json.hpp"
#include "npeb/errors.hpp"
#include "npeb/format.hpp"

namespace npeb {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::string(trim(cur)));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quote in '" + line + "'");
  out.push_back(std::string(trim(cur)));
  return out;
}

bool blank(const std::string& line) { return trim(line).empty(); }

std::string quantile_column(double alpha) { return Target::quantile(alpha).name() + "_hat"; }

std::string group_key(const LongRecord& r) {
  std::string key;
  for (const auto& g : r.groups) {
    key += g;
    key += '\x1f';
  }
  return key;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

LongData read_long_csv(std::istream& in, const std::vector<std::string>& group_columns) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyData, "input has no header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "unit_id" || header[1] != "outcome") {
    throw Error(ErrorCode::ParseError, "header must start with unit_id,outcome");
  }
  LongData data;
  std::vector<int> role(header.size(), -1);  // -1 covariate, >= 0 group index
  for (const auto& g : group_columns) {
    const auto it = std::find(header.begin() + 2, header.end(), g);
    if (it == header.end()) throw Error(ErrorCode::ParseError, "group column '" + g + "' not found");
    role[static_cast<std::size_t>(it - header.begin())] = static_cast<int>(data.group_names.size());
    data.group_names.push_back(g);
  }
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (role[c] >= 0) continue;
    cov_cols.push_back(c);
    data.covariate_names.push_back(header[c]);
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " fields, got " +
                                             std::to_string(fields.size()));
    }
    LongRecord r;
    r.unit_id = fields[0];
    if (r.unit_id.empty()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": empty unit_id");
    }
    const std::string where = "line " + std::to_string(line_no);
    r.outcome = parse_double(fields[1], where + " outcome");
    if (!std::isfinite(r.outcome)) {
      throw Error(ErrorCode::InvalidArgument, where + ": outcome is not finite");
    }
    for (std::size_t c : cov_cols) {
      const double v = parse_double(fields[c], where + " " + header[c]);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::InvalidArgument, where + ": " + header[c] + " is not finite");
      }
      r.covariates.push_back(v);
    }
    r.groups.resize(data.group_names.size());
    for (std::size_t c = 2; c < header.size(); ++c) {
      if (role[c] >= 0) r.groups[static_cast<std::size_t>(role[c])] = fields[c];
    }
    data.records.push_back(std::move(r));
  }
  if (data.records.empty()) throw Error(ErrorCode::EmptyData, "input has no records");
  return data;
}

LongData read_long_csv_file(const std::string& path, const std::vector<std::string>& group_columns) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  return read_long_csv(in, group_columns);
}

void write_long_csv(std::ostream& out, const LongData& data) {
  out << "unit_id,outcome";
  for (const auto& n : data.covariate_names) out << ',' << csv_field(n);
  for (const auto& n : data.group_names) out << ',' << csv_field(n);
  out << '\n';
  for (const auto& r : data.records) {
    out << csv_field(r.unit_id) << ',' << format_double(r.outcome);
    for (double x : r.covariates) out << ',' << format_double(x);
    for (const auto& g : r.groups) out << ',' << csv_field(g);
    out << '\n';
  }
}

void standardize_within_groups(LongData& data) {
  if (data.group_names.empty()) {
    throw Error(ErrorCode::InvalidArgument, "standardization needs at least one group column");
  }
  struct Cell {
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  std::map<std::string, Cell> cells;
  for (const auto& r : data.records) {
    auto& c = cells[group_key(r)];
    ++c.count;
    const double d = r.outcome - c.mean;
    c.mean += d / static_cast<double>(c.count);
    c.m2 += d * (r.outcome - c.mean);
  }
  for (const auto& [key, c] : cells) {
    if (c.count < 2 || !(c.m2 > 0.0)) {
      std::string shown = key;
      std::replace(shown.begin(), shown.end(), '\x1f', '/');
      throw Error(ErrorCode::InvalidArgument,
                  "group cell '" + shown + "' cannot be standardized (" +
                      std::to_string(c.count) + " records)");
    }
  }
  for (auto& r : data.records) {
    const auto& c = cells.at(group_key(r));
    r.outcome = (r.outcome - c.mean) / std::sqrt(c.m2 / static_cast<double>(c.count - 1));
  }
}

PartialOutResult partial_out_covariates(LongData& data) {
  const std::size_t p = data.covariate_names.size();
  if (p == 0) throw Error(ErrorCode::InvalidArgument, "partial_out_covariates: no covariates");
  if (data.records.empty()) throw Error(ErrorCode::EmptyData, "partial_out_covariates: no records");

  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    const auto [it, fresh] = index.try_emplace(data.records[r].unit_id, members.size());
    if (fresh) members.emplace_back();
    members[it->second].push_back(r);
  }
  for (const auto& [id, u] : index) {
    if (members[u].size() < 2) {
      throw Error(ErrorCode::InsufficientWithinVariation,
                  "unit '" + id + "' has a single record; within-unit demeaning removes it");
    }
  }

  const auto rows = static_cast<Eigen::Index>(data.records.size());
  const auto cols = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd x(rows, cols);
  Eigen::VectorXd y(rows);
  for (const auto& m : members) {
    Eigen::VectorXd x_mean = Eigen::VectorXd::Zero(cols);
    double y_mean = 0.0;
    for (std::size_t r : m) {
      x_mean += Eigen::Map<const Eigen::VectorXd>(data.records[r].covariates.data(), cols);
      y_mean += data.records[r].outcome;
    }
    x_mean /= static_cast<double>(m.size());
    y_mean /= static_cast<double>(m.size());
    for (std::size_t r : m) {
      const auto row = static_cast<Eigen::Index>(r);
      x.row(row) =
          Eigen::Map<const Eigen::VectorXd>(data.records[r].covariates.data(), cols).transpose() -
          x_mean.transpose();
      y[row] = data.records[r].outcome - y_mean;
    }
  }

  // identically zero columns contribute nothing and get beta = 0; other
  // columns constant within every unit vanish after demeaning
  std::vector<std::string> absorbed;
  std::vector<Eigen::Index> active;
  for (Eigen::Index c = 0; c < cols; ++c) {
    bool zero = true;
    for (const auto& r : data.records) zero = zero && r.covariates[static_cast<std::size_t>(c)] == 0.0;
    if (zero) continue;
    if (x.col(c).cwiseAbs().maxCoeff() <= 1e-12) {
      absorbed.push_back(data.covariate_names[static_cast<std::size_t>(c)]);
    }
    active.push_back(c);
  }
  const auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& n : v) s += (s.empty() ? "" : ",") + n;
    return s;
  };
  if (!absorbed.empty()) {
    throw Error(ErrorCode::RankDeficient,
                "covariates without within-unit variation: " + join(absorbed));
  }

  const auto k = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd xa(rows, k);
  for (Eigen::Index c = 0; c < k; ++c) xa.col(c) = x.col(active[static_cast<std::size_t>(c)]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  if (k > 0) qr.compute(xa);
  if (k > 0 && qr.rank() < k) {
    std::vector<std::string> dropped;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index c = qr.rank(); c < k; ++c) {
      dropped.push_back(
          data.covariate_names[static_cast<std::size_t>(active[static_cast<std::size_t>(perm[c])])]);
    }
    throw Error(ErrorCode::RankDeficient,
                "collinear covariates after within-unit demeaning: " + join(dropped));
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(cols);
  if (k > 0) {
    const Eigen::VectorXd b = qr.solve(y);
    for (Eigen::Index c = 0; c < k; ++c) beta[active[static_cast<std::size_t>(c)]] = b[c];
  }

  PartialOutResult out;
  out.names = data.covariate_names;
  out.beta.assign(beta.data(), beta.data() + cols);
  out.records = data.records.size();
  out.units = members.size();
  const double tss = y.squaredNorm();
  out.within_r2 = tss > 0.0 ? 1.0 - (y - x * beta).squaredNorm() / tss : 0.0;

  for (auto& r : data.records) {
    double fit = 0.0;
    for (std::size_t c = 0; c < p; ++c) fit += r.covariates[c] * out.beta[c];
    r.outcome -= fit;
  }
  return out;
}

std::vector<UnitObservations> group_by_unit(const LongData& data) {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<UnitObservations> units;
  for (const auto& r : data.records) {
    const auto [it, fresh] = index.try_emplace(r.unit_id, units.size());
    if (fresh) units.push_back({r.unit_id, {}});
    units[it->second].values.push_back(r.outcome);
  }
  return units;
}

std::vector<SufficientStats> stats_from_observations(std::span<const UnitObservations> units) {
  if (units.empty()) throw Error(ErrorCode::EmptyData, "no units");
  std::vector<SufficientStats> out;
  out.reserve(units.size());
  for (const auto& u : units) {
    try {
      out.push_back(compute_sufficient_stats(u));
    } catch (const Error& e) {
      throw Error(e.code(), "unit '" + u.unit_id + "': " + e.what());
    }
  }
  return out;
}

std::string JRange::label() const {
  return lo == hi ? "J=" + std::to_string(lo) : "J=" + std::to_string(lo) + "-" + std::to_string(hi);
}

std::vector<JRange> parse_j_ranges(const std::string& text) {
  std::vector<JRange> out;
  for (const auto& part : split(text, ',')) {
    const auto piece = trim(part);
    if (piece.empty()) continue;
    const auto dash = piece.find('-', 1);
    JRange r;
    if (dash == std::string_view::npos) {
      r.lo = r.hi = static_cast<int>(parse_integer(piece, "J range"));
    } else {
      r.lo = static_cast<int>(parse_integer(piece.substr(0, dash), "J range"));
      r.hi = static_cast<int>(parse_integer(piece.substr(dash + 1), "J range"));
    }
    if (r.lo > r.hi) throw Error(ErrorCode::ParseError, "empty J range '" + std::string(piece) + "'");
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const JRange& a, const JRange& b) { return a.lo < b.lo; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].lo <= out[i - 1].hi) {
      throw Error(ErrorCode::ParseError, "overlapping J ranges " + out[i - 1].label() + " and " +
                                             out[i].label());
    }
  }
  return out;
}

std::vector<UnitBin> assign_bins(std::span<const SufficientStats> stats, const BinningRule& rule) {
  if (stats.empty()) throw Error(ErrorCode::EmptyData, "no units to bin");
  std::vector<JRange> ranges = rule.ranges;
  if (ranges.empty()) {
    std::vector<int> js;
    for (const auto& u : stats) js.push_back(u.j_count);
    std::sort(js.begin(), js.end());
    js.erase(std::unique(js.begin(), js.end()), js.end());
    for (int j : js) ranges.push_back({j, j});
  }
  std::vector<UnitBin> bins(ranges.size());
  for (std::size_t b = 0; b < ranges.size(); ++b) bins[b].label = ranges[b].label();
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const int j = stats[i].j_count;
    const auto it = std::find_if(ranges.begin(), ranges.end(),
                                 [j](const JRange& r) { return r.lo <= j && j <= r.hi; });
    if (it == ranges.end()) {
      throw Error(ErrorCode::InvalidArgument,
                  "unit '" + stats[i].unit_id + "' with J=" + std::to_string(j) +
                      " falls outside every bin");
    }
    bins[static_cast<std::size_t>(it - ranges.begin())].members.push_back(i);
  }
  std::vector<UnitBin> used;
  for (auto& b : bins) {
    if (b.members.empty()) continue;
    if (b.members.size() < rule.min_units) {
      throw Error(ErrorCode::BinTooSmall, "bin " + b.label + " has " +
                                              std::to_string(b.members.size()) +
                                              " units, fewer than " +
                                              std::to_string(rule.min_units));
    }
    used.push_back(std::move(b));
  }
  return used;
}

std::vector<UnitEstimates> bin_and_estimate(std::span<const SufficientStats> stats,
                                            const PipelineConfig& config) {
  config.estimator.validate();
  if (config.methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods requested");
  const bool wants_oracle =
      std::find(config.methods.begin(), config.methods.end(), Method::Oracle) != config.methods.end();
  if (wants_oracle && !config.oracle) {
    throw Error(ErrorCode::InvalidArgument, "ORACLE requested without a prior");
  }
  const auto& alphas = config.estimator.alpha_list;
  std::vector<UnitEstimates> out;
  for (const auto& bin : assign_bins(stats, config.binning)) {
    std::vector<SufficientStats> sub;
    sub.reserve(bin.members.size());
    for (std::size_t i : bin.members) sub.push_back(stats[i]);

    std::optional<HetResults> het;
    const auto het_variants = [&]() -> const HetResults& {
      if (!het) het = estimate_het_variants(sub, config.sieve, config.estimator, config.threads);
      return *het;
    };
    for (Method m : config.methods) {
      std::vector<UnitEstimates> rows;
      switch (m) {
        case Method::Het: rows = het_variants().het; break;
        case Method::HetFull: rows = het_variants().het_full; break;
        case Method::Hom:
          rows = estimate_all_units_hom(sub, config.sieve, config.estimator, config.threads);
          break;
        case Method::Naive: rows = estimate_all_units_naive(sub, alphas); break;
        case Method::Oracle:
          rows = oracle_estimates(sub, *config.oracle, alphas, config.threads);
          break;
      }
      out.insert(out.end(), std::make_move_iterator(rows.begin()),
                 std::make_move_iterator(rows.end()));
    }
  }
  return out;
}

void write_estimates_csv(std::ostream& out, std::span<const UnitEstimates> estimates,
                         std::span<const double> alpha_list) {
  out << "unit_id,method,mu_hat,sigma_hat,sigma2_hat";
  for (double a : alpha_list) out << ',' << quantile_column(a);
  out << ",truncated\n";
  for (const auto& e : estimates) {
    out << csv_field(e.unit_id) << ',' << method_name(e.method) << ',' << format_double(e.mu_hat)
        << ',' << format_double(e.sigma_hat) << ',' << format_double(e.sigma2_hat);
    for (double a : alpha_list) {
      const auto it = e.q_hat.find(a);
      if (it == e.q_hat.end()) {
        throw Error(ErrorCode::InvalidArgument,
                    "unit '" + e.unit_id + "' has no quantile estimate for " + quantile_column(a));
      }
      out << ',' << format_double(it->second);
    }
    out << ',' << (e.truncated ? 1 : 0) << '\n';
  }
}

std::vector<UnitEstimates> read_estimates_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyData, "estimates file has no header");
  const auto header = split_csv_line(line);
  const std::vector<std::string> fixed = {"unit_id", "method", "mu_hat", "sigma_hat", "sigma2_hat"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw Error(ErrorCode::ParseError,
                "estimates header must start with unit_id,method,mu_hat,sigma_hat,sigma2_hat");
  }
  std::vector<std::pair<std::size_t, double>> q_cols;
  std::optional<std::size_t> trunc_col;
  for (std::size_t c = fixed.size(); c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "truncated") {
      trunc_col = c;
    } else if (h.size() > 5 && h.front() == 'q' && h.ends_with("_hat")) {
      q_cols.emplace_back(c, parse_double(h.substr(1, h.size() - 5), "column " + h) / 100.0);
    } else {
      throw Error(ErrorCode::ParseError, "unknown estimates column '" + h + "'");
    }
  }
  std::vector<UnitEstimates> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != header.size()) throw Error(ErrorCode::ParseError, where + ": wrong field count");
    UnitEstimates e;
    e.unit_id = f[0];
    try {
      e.method = parse_method(f[1]);
    } catch (const Error&) {
      throw Error(ErrorCode::ParseError, where + ": unknown method '" + f[1] + "'");
    }
    e.mu_hat = parse_double(f[2], where + " mu_hat");
    e.sigma_hat = parse_double(f[3], where + " sigma_hat");
    e.sigma2_hat = parse_double(f[4], where + " sigma2_hat");
    for (const auto& [c, a] : q_cols) e.q_hat[a] = parse_double(f[c], where + " " + header[c]);
    if (trunc_col) e.truncated = parse_integer(f[*trunc_col], where + " truncated") != 0;
    out.push_back(std::move(e));
  }
  return out;
}

std::string estimates_json(std::span<const UnitEstimates> estimates,
                           std::span<const double> alpha_list) {
  // numbers go through format_double so JSON and CSV print identical digits
  std::string out = "[";
  bool first = true;
  for (const auto& e : estimates) {
    out += first ? "\n" : ",\n";
    first = false;
    out += "  {\"unit_id\": " + nlohmann::json(e.unit_id).dump() + ", \"method\": \"" +
           std::string(method_name(e.method)) + "\", \"mu_hat\": " + format_double(e.mu_hat) +
           ", \"sigma_hat\": " + format_double(e.sigma_hat) +
           ", \"sigma2_hat\": " + format_double(e.sigma2_hat);
    for (double a : alpha_list) {
      const auto it = e.q_hat.find(a);
      if (it == e.q_hat.end()) continue;
      out += ", \"" + quantile_column(a) + "\": " + format_double(it->second);
    }
    out += std::string(", \"truncated\": ") + (e.truncated ? "true" : "false") + "}";
  }
  out += first ? "]\n" : "\n]\n";
  return out;
}

void write_truths_csv(std::ostream& out, std::span<const SufficientStats> units,
                      std::span<const UnitTruth> truths) {
  if (units.size() != truths.size()) {
    throw Error(ErrorCode::LengthMismatch, "write_truths_csv: units and truths differ in length");
  }
  out << "unit_id,mu,sigma\n";
  for (std::size_t i = 0; i < units.size(); ++i) {
    out << csv_field(units[i].unit_id) << ',' << format_double(truths[i].mu) << ','
        << format_double(truths[i].sigma) << '\n';
  }
}

TruthTable read_truths_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyData, "truths file has no header");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"unit_id", "mu", "sigma"}) {
    throw Error(ErrorCode::ParseError, "truths header must be unit_id,mu,sigma");
  }
  TruthTable out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != 3) throw Error(ErrorCode::ParseError, where + ": wrong field count");
    UnitTruth t;
    t.mu = parse_double(f[1], where + " mu");
    t.sigma = parse_double(f[2], where + " sigma");
    if (!(t.sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, where + ": sigma must be positive");
    out.unit_ids.push_back(f[0]);
    out.truths.push_back(t);
  }
  if (out.truths.empty()) throw Error(ErrorCode::EmptyData, "truths file has no rows");
  return out;
}

}  // namespace npeb
