#include "npeb/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "CLI11.hpp"
#include "json.hpp"
#include "npeb/config.hpp"
#include "npeb/errors.hpp"
#include "npeb/format.hpp"
#include "npeb/pipeline.hpp"
#include "npeb/risk_eval.hpp"
#include "npeb/simulation.hpp"

namespace npeb {

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  int threads = 1;
  std::string output_dir;
  std::string format = "csv";
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Writes `text` to <output-dir>/<name>, or to `out` without an output dir.
void emit(const GlobalOptions& g, const std::string& name, const std::string& text,
          std::ostream& out, std::ostream& err) {
  if (g.output_dir.empty()) {
    out << text;
    return;
  }
  std::error_code ec;
  std::filesystem::create_directories(g.output_dir, ec);
  const auto path = std::filesystem::path(g.output_dir) / name;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error(ErrorCode::InvalidArgument, "write failed for '" + path.string() + "'");
  err << "INFO event=wrote path=" << quote(path.string()) << '\n';
}

std::string ext(const GlobalOptions& g) { return g.format == "json" ? ".json" : ".csv"; }

ConfigValues load_config(const GlobalOptions& g) {
  return g.config.empty() ? ConfigValues{} : read_config_file(g.config);
}

std::string regrets_text(const GlobalOptions& g, const std::vector<RegretReport>& reports) {
  if (g.format == "json") return regret_reports_json(reports);
  std::string text = regret_csv_header();
  for (const auto& r : reports) text += regret_csv_rows(r);
  return text;
}

// --- simulate ---------------------------------------------------------------

struct SimulateOptions {
  std::vector<std::size_t> n;
  std::optional<int> rounds;
  std::optional<int> j_count;
  std::string methods;
  std::string detect_mu;
  std::string detect_q;
};

int run_simulate(const GlobalOptions& g, const SimulateOptions& o, std::ostream& out,
                 std::ostream& err) {
  ExperimentSpec spec;
  apply_config(load_config(g), &spec, nullptr);
  if (g.seed) spec.seed = *g.seed;
  if (!o.n.empty()) spec.n_list = o.n;
  if (o.rounds) spec.rounds = *o.rounds;
  if (o.j_count) spec.j_count = *o.j_count;
  if (!o.methods.empty()) spec.methods = parse_method_list(o.methods);
  if (!o.detect_mu.empty()) spec.detect_mu = parse_double_list(o.detect_mu, "--detect-mu");
  if (!o.detect_q.empty()) spec.detect_q = parse_double_list(o.detect_q, "--detect-q");
  spec.threads = resolve_threads(g.threads);

  const auto result = run_experiment(spec);
  const auto& d = result.diagnostics;
  err << "INFO event=simulate dgp=" << quote(result.dgp.describe()) << " fits=" << d.fits
      << " min_em_step=" << format_double(d.min_em_step)
      << " unconverged_full_fits=" << d.unconverged_full_fits
      << " max_full_iters=" << d.max_full_iters << " max_loo_iters=" << d.max_loo_iters
      << " truncated_units=" << d.truncated_units << '\n';
  if (d.min_em_step < -1e-12) {
    err << "WARN event=em_not_monotone min_em_step=" << format_double(d.min_em_step) << '\n';
  }
  std::vector<RegretReport> all = result.mse;
  all.insert(all.end(), result.detection.begin(), result.detection.end());
  emit(g, "regret" + ext(g), regrets_text(g, all), out, err);
  return kExitOk;
}

// --- calibrate --------------------------------------------------------------

struct CalibrateOptions {
  std::optional<double> e_mu, v_mu, e_sigma2, v_sigma2, cor;
};

int run_calibrate(const GlobalOptions& g, const CalibrateOptions& o, std::ostream& out,
                  std::ostream& err) {
  ExperimentSpec spec;
  apply_config(load_config(g), &spec, nullptr);
  MomentTargets t;
  if (const auto* m = std::get_if<MomentTargets>(&spec.dgp)) t = *m;
  if (o.e_mu) t.e_mu = *o.e_mu;
  if (o.v_mu) t.v_mu = *o.v_mu;
  if (o.e_sigma2) t.e_sigma2 = *o.e_sigma2;
  if (o.v_sigma2) t.v_sigma2 = *o.v_sigma2;
  if (o.cor) t.cor_mu_sigma2 = *o.cor;
  const auto d = calibrate_dgp(t);
  err << "INFO event=calibrate dgp=" << quote(d.describe()) << '\n';
  std::string text;
  if (g.format == "json") {
    text = "{\"alpha\": " + format_double(d.alpha) + ", \"nu\": " + format_double(d.nu) +
           ", \"kappa\": " + format_double(d.kappa) + ", \"lambda\": " + format_double(d.lambda) +
           ", \"rho\": " + format_double(d.rho_copula) + "}\n";
  } else {
    text = "alpha,nu,kappa,lambda,rho\n" + format_double(d.alpha) + "," + format_double(d.nu) +
           "," + format_double(d.kappa) + "," + format_double(d.lambda) + "," +
           format_double(d.rho_copula) + "\n";
  }
  emit(g, "dgp" + ext(g), text, out, err);
  return kExitOk;
}

// --- generate ---------------------------------------------------------------

struct GenerateOptions {
  std::size_t n = 200;
  int j_count = 15;
  std::string beta;
};

int run_generate(const GlobalOptions& g, const GenerateOptions& o, std::ostream& out,
                 std::ostream& err) {
  ExperimentSpec spec;
  apply_config(load_config(g), &spec, nullptr);
  const auto dgp = spec.resolved_dgp();
  const std::uint64_t seed = g.seed.value_or(spec.seed);
  const auto beta = parse_double_list(o.beta, "--beta");
  if (o.n < 1) throw Error(ErrorCode::InvalidArgument, "--n must be positive");

  const auto truths = draw_parameters(dgp, o.n, seed);
  const auto drawn = draw_observations(truths, o.j_count, seed);
  LongData data;
  for (std::size_t c = 0; c < beta.size(); ++c) data.covariate_names.push_back("x" + std::to_string(c + 1));
  for (std::size_t i = 0; i < drawn.observations.size(); ++i) {
    const auto& u = drawn.observations[i];
    RandomStream xs(seed, i, 2);
    for (double y : u.values) {
      LongRecord r{u.unit_id, y, {}, {}};
      for (double b : beta) {
        const double x = xs.normal();
        r.covariates.push_back(x);
        r.outcome += b * x;
      }
      data.records.push_back(std::move(r));
    }
  }
  std::ostringstream data_csv, truth_csv;
  write_long_csv(data_csv, data);
  write_truths_csv(truth_csv, drawn.dataset.units, truths);
  err << "INFO event=generate n=" << o.n << " J=" << o.j_count << " seed=" << seed
      << " dgp=" << quote(dgp.describe()) << '\n';
  if (g.output_dir.empty()) {
    out << data_csv.str();
    return kExitOk;
  }
  emit(g, "data.csv", data_csv.str(), out, err);
  emit(g, "truths.csv", truth_csv.str(), out, err);
  return kExitOk;
}

// --- estimate ---------------------------------------------------------------

struct EstimateOptions {
  std::string input;
  std::string methods;
  std::string group_cols;
  bool standardize = false;
  std::string bins;
  std::optional<std::size_t> min_bin_units;
};

int run_estimate(const GlobalOptions& g, const EstimateOptions& o, std::ostream& out,
                 std::ostream& err) {
  PipelineConfig cfg;
  apply_config(load_config(g), nullptr, &cfg);
  if (!o.methods.empty()) cfg.methods = parse_method_list(o.methods);
  if (!o.group_cols.empty()) cfg.group_columns = split(o.group_cols, ',');
  for (auto& c : cfg.group_columns) c = std::string(trim(c));
  if (o.standardize) cfg.standardize = true;
  if (!o.bins.empty()) cfg.binning.ranges = parse_j_ranges(o.bins);
  if (o.min_bin_units) cfg.binning.min_units = *o.min_bin_units;
  cfg.threads = resolve_threads(g.threads);

  auto data = read_long_csv_file(o.input, cfg.group_columns);
  err << "INFO event=read records=" << data.records.size()
      << " covariates=" << data.covariate_names.size() << '\n';
  if (cfg.standardize) standardize_within_groups(data);
  if (!data.covariate_names.empty()) {
    const auto po = partial_out_covariates(data);
    for (std::size_t c = 0; c < po.names.size(); ++c) {
      err << "INFO event=beta name=" << po.names[c] << " value=" << format_double(po.beta[c]) << '\n';
    }
    err << "INFO event=partial_out units=" << po.units << " records=" << po.records
        << " within_r2=" << format_double(po.within_r2) << '\n';
  }
  const auto units = group_by_unit(data);
  const auto stats = stats_from_observations(units);
  for (const auto& bin : assign_bins(stats, cfg.binning)) {
    err << "INFO event=bin label=" << bin.label << " units=" << bin.members.size() << '\n';
  }
  const auto estimates = bin_and_estimate(stats, cfg);
  std::size_t truncated = 0;
  for (const auto& e : estimates) truncated += e.truncated ? 1 : 0;
  err << "INFO event=estimate rows=" << estimates.size() << " truncated=" << truncated << '\n';

  std::string text;
  if (g.format == "json") {
    text = estimates_json(estimates, cfg.estimator.alpha_list);
  } else {
    std::ostringstream s;
    write_estimates_csv(s, estimates, cfg.estimator.alpha_list);
    text = s.str();
  }
  emit(g, "estimates" + ext(g), text, out, err);
  return kExitOk;
}

// --- detect -----------------------------------------------------------------

struct DetectOptions {
  std::string estimates;
  std::string target = "mu";
  std::string thresholds;
  std::string methods;
};

std::vector<UnitEstimates> load_estimates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  return read_estimates_csv(in);
}

Target parse_target(const std::string& name) {
  if (name == "mu") return Target::mu();
  if (name == "sigma") return Target::sigma();
  if (name == "sigma2") return Target::sigma2();
  if (name.size() > 1 && name.front() == 'q') {
    return Target::quantile(parse_double(name.substr(1), "target") / 100.0);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown target '" + name + "'");
}

// Methods in first-appearance order.
std::vector<Method> methods_in(const std::vector<UnitEstimates>& est) {
  std::vector<Method> out;
  for (const auto& e : est) {
    if (std::find(out.begin(), out.end(), e.method) == out.end()) out.push_back(e.method);
  }
  return out;
}

double target_value(const Target& t, const UnitEstimates& e) {
  if (t.kind == Target::Kind::Quantile) {
    for (const auto& [a, q] : e.q_hat) {
      if (std::fabs(a - t.alpha) <= 1e-12) return q;
    }
    throw Error(ErrorCode::InvalidArgument,
                "estimates have no column for target " + t.name());
  }
  return t.of(e);
}

int run_detect(const GlobalOptions& g, const DetectOptions& o, std::ostream& out,
               std::ostream& err) {
  const auto est = load_estimates(o.estimates);
  const auto target = parse_target(o.target);
  const auto cs = parse_double_list(o.thresholds, "--thresholds");
  if (cs.empty()) throw Error(ErrorCode::InvalidArgument, "--thresholds is empty");
  auto methods = methods_in(est);
  if (!o.methods.empty()) methods = parse_method_list(o.methods);

  std::string text = g.format == "json" ? "[" : "method,target,c,count,unit_ids\n";
  bool first = true;
  for (Method m : methods) {
    std::vector<UnitEstimates> rows;
    for (const auto& e : est) {
      if (e.method == m) rows.push_back(e);
    }
    if (rows.empty()) throw Error(ErrorCode::InvalidArgument,
                                  "no estimates for method " + std::string(method_name(m)));
    std::vector<double> values;
    for (const auto& e : rows) values.push_back(target_value(target, e));
    for (double c : cs) {
      const auto flags = flag_below_threshold(rows, values, c);
      std::string ids;
      for (const auto& id : flags.unit_ids) ids += (ids.empty() ? "" : ";") + id;
      if (g.format == "json") {
        nlohmann::json id_list = flags.unit_ids;
        text += std::string(first ? "\n" : ",\n") + "  {\"method\": \"" +
                std::string(method_name(m)) + "\", \"target\": \"" + target.name() +
                "\", \"c\": " + format_double(c) + ", \"count\": " + std::to_string(flags.count) +
                ", \"unit_ids\": " + id_list.dump() + "}";
      } else {
        text += std::string(method_name(m)) + "," + target.name() + "," + format_double(c) + "," +
                std::to_string(flags.count) + "," + ids + "\n";
      }
      first = false;
      err << "INFO event=detect method=" << method_name(m) << " target=" << target.name()
          << " c=" << format_double(c) << " count=" << flags.count << '\n';
    }
  }
  if (g.format == "json") text += first ? "]\n" : "\n]\n";
  emit(g, "detect" + ext(g), text, out, err);
  return kExitOk;
}

// --- regret -----------------------------------------------------------------

struct RegretOptions {
  std::string estimates;
  std::string truths;
  std::string detect_mu;
  std::string detect_q;
};

RegretReport report_or_plain(const std::string& target, const std::string& loss,
                             std::optional<double> c,
                             std::vector<std::pair<Method, std::vector<double>>> losses,
                             std::ostream& err) {
  try {
    return make_regret_report(target, loss, c, losses);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroOracleLoss) throw;
    err << "WARN event=zero_oracle_loss target=" << target << " loss=" << loss;
    if (c) err << " c=" << format_double(*c);
    err << '\n';
    std::erase_if(losses, [](const auto& p) { return p.first == Method::Oracle; });
    return make_regret_report(target, loss, c, losses);
  }
}

int run_regret(const GlobalOptions& g, const RegretOptions& o, std::ostream& out,
               std::ostream& err) {
  const auto est = load_estimates(o.estimates);
  std::ifstream tin(o.truths);
  if (!tin) throw Error(ErrorCode::InvalidArgument, "cannot open '" + o.truths + "'");
  const auto truth = read_truths_csv(tin);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < truth.unit_ids.size(); ++i) by_id.emplace(truth.unit_ids[i], i);

  std::set<double> alphas;
  for (const auto& e : est) {
    for (const auto& [a, q] : e.q_hat) alphas.insert(a);
  }
  std::vector<Target> targets = {Target::mu(), Target::sigma(), Target::sigma2()};
  for (double a : alphas) targets.push_back(Target::quantile(a));
  const auto methods = methods_in(est);
  const auto det_mu = parse_double_list(o.detect_mu, "--detect-mu");
  const auto det_q = parse_double_list(o.detect_q, "--detect-q");

  std::vector<RegretReport> reports;
  const auto add = [&](const Target& t, const std::string& loss, std::optional<double> c) {
    std::vector<std::pair<Method, std::vector<double>>> losses;
    for (Method m : methods) {
      std::vector<double> e_vals, t_vals;
      for (const auto& e : est) {
        if (e.method != m) continue;
        const auto it = by_id.find(e.unit_id);
        if (it == by_id.end()) {
          throw Error(ErrorCode::UnknownUnit, "no truth for unit '" + e.unit_id + "'");
        }
        e_vals.push_back(target_value(t, e));
        t_vals.push_back(t.of(truth.truths[it->second]));
      }
      const double l = c ? detection_loss(e_vals, t_vals, *c) : mse_loss(e_vals, t_vals);
      losses.emplace_back(m, std::vector<double>{l});
    }
    auto r = report_or_plain(t.name(), loss, c, std::move(losses), err);
    r.n = by_id.size();
    r.rounds = 1;
    reports.push_back(std::move(r));
  };
  for (const auto& t : targets) add(t, "mse", std::nullopt);
  for (double c : det_mu) add(Target::mu(), "detection", c);
  for (double a : alphas) {
    for (double c : det_q) add(Target::quantile(a), "detection", c);
  }
  err << "INFO event=regret reports=" << reports.size() << " methods=" << methods.size() << '\n';
  emit(g, "regret" + ext(g), regrets_text(g, reports), out, err);
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nonparametric empirical Bayes under unknown heteroskedasticity"};
  app.name("npeb");
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--config", g.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--output-dir", g.output_dir, "write result files here instead of stdout");
  app.add_option("--format", g.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo regrets on the copula prior");
  simulate->add_option("--n", sim.n, "unit counts")->delimiter(',');
  simulate->add_option("--rounds", sim.rounds, "replications per n")->check(CLI::PositiveNumber);
  simulate->add_option("--J", sim.j_count, "observations per unit")->check(CLI::Range(4, 1000000));
  simulate->add_option("--methods", sim.methods, "comma-separated methods");
  simulate->add_option("--detect-mu", sim.detect_mu, "thresholds for mu detection");
  simulate->add_option("--detect-q", sim.detect_q, "thresholds for quantile detection");

  CalibrateOptions cal;
  auto* calibrate = app.add_subcommand("calibrate", "moment targets to prior parameters");
  calibrate->add_option("--e-mu", cal.e_mu);
  calibrate->add_option("--v-mu", cal.v_mu);
  calibrate->add_option("--e-sigma2", cal.e_sigma2);
  calibrate->add_option("--v-sigma2", cal.v_sigma2);
  calibrate->add_option("--cor", cal.cor);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "synthetic long CSV and truths");
  generate->add_option("--n", gen.n, "units")->check(CLI::PositiveNumber);
  generate->add_option("--J", gen.j_count, "observations per unit")->check(CLI::Range(4, 1000000));
  generate->add_option("--beta", gen.beta, "planted covariate coefficients, e.g. 0.5,-0.2");

  EstimateOptions est;
  auto* estimate = app.add_subcommand("estimate", "long CSV to per-unit estimates");
  estimate->add_option("--input", est.input, "long CSV")->required()->check(CLI::ExistingFile);
  estimate->add_option("--methods", est.methods, "comma-separated methods");
  estimate->add_option("--group-cols", est.group_cols, "group-key columns");
  estimate->add_flag("--standardize", est.standardize, "standardize within group cells");
  estimate->add_option("--bins", est.bins, "J ranges, e.g. 14-22");
  estimate->add_option("--min-bin-units", est.min_bin_units)->check(CLI::PositiveNumber);

  DetectOptions det;
  auto* detect = app.add_subcommand("detect", "flag units at or below thresholds");
  detect->add_option("--estimates", det.estimates)->required()->check(CLI::ExistingFile);
  detect->add_option("--target", det.target, "mu, sigma, sigma2 or q<100a>");
  detect->add_option("--thresholds", det.thresholds, "comma-separated c values")->required();
  detect->add_option("--methods", det.methods, "restrict to these methods");

  RegretOptions reg;
  auto* regret = app.add_subcommand("regret", "losses and relative regrets against truths");
  regret->add_option("--estimates", reg.estimates)->required()->check(CLI::ExistingFile);
  regret->add_option("--truths", reg.truths)->required()->check(CLI::ExistingFile);
  regret->add_option("--detect-mu", reg.detect_mu);
  regret->add_option("--detect-q", reg.detect_q);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << (e.get_name() == "CallForAllHelp" ? app.help("", CLI::AppFormatMode::All) : app.help());
      return kExitOk;
    }
    err << "ERROR code=Usage message=" << quote(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(g, sim, out, err);
    if (*calibrate) return run_calibrate(g, cal, out, err);
    if (*generate) return run_generate(g, gen, out, err);
    if (*estimate) return run_estimate(g, est, out, err);
    if (*detect) return run_detect(g, det, out, err);
    if (*regret) return run_regret(g, reg, out, err);
  } catch (const Error& e) {
    err << "ERROR code=" << error_code_name(e.code()) << " message=" << quote(e.what()) << '\n';
    return is_numerical(e.code()) ? kExitNumerical : kExitData;
  } catch (const std::exception& e) {
    err << "ERROR code=Internal message=" << quote(e.what()) << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace npeb
