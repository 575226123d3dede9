#include "npeb/config.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <optional>

#include "npeb/errors.hpp"
#include "npeb/format.hpp"

namespace npeb {

namespace {

std::string unwrap(std::string_view v) {
  v = trim(v);
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '[' && v.back() == ']'))) {
    v = trim(v.substr(1, v.size() - 2));
  }
  return std::string(v);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::ParseError, key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> parse_names(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& p : split(v, ',')) {
    const auto name = unwrap(p);
    if (!name.empty()) out.push_back(name);
  }
  return out;
}

int parse_positive_int(const std::string& v, const std::string& key) {
  const auto x = parse_integer(v, key);
  if (x <= 0 || x > 1'000'000'000) throw Error(ErrorCode::ParseError, key + " must be positive");
  return static_cast<int>(x);
}

}  // namespace

std::vector<Method> parse_method_list(const std::string& text) {
  std::vector<Method> out;
  for (const auto& name : parse_names(text)) {
    try {
      out.push_back(parse_method(name));
    } catch (const Error&) {
      throw Error(ErrorCode::ParseError, "unknown method '" + name + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::ParseError, "empty method list");
  return out;
}

ConfigValues parse_config(std::istream& in) {
  ConfigValues out;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body(trim(strip_comment(line)));
    if (body.empty()) continue;
    if (body.front() == '[' && body.back() == ']' && body.find('=') == std::string::npos) {
      section = std::string(trim(std::string_view(body).substr(1, body.size() - 2)));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, "config line " + std::to_string(line_no) + ": missing '='");
    }
    std::string key(trim(std::string_view(body).substr(0, eq)));
    if (key.empty()) {
      throw Error(ErrorCode::ParseError, "config line " + std::to_string(line_no) + ": empty key");
    }
    if (!section.empty()) key = section + "." + key;
    out.entries.emplace_back(key, unwrap(std::string_view(body).substr(eq + 1)));
  }
  return out;
}

ConfigValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open config '" + path + "'");
  return parse_config(in);
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  return {
      {"n", "list of unit counts, e.g. 200, 4000"},
      {"J", "observations per unit in simulations"},
      {"rounds", "replications per n"},
      {"seed", "master seed"},
      {"threads", "worker threads"},
      {"methods", "HET, HET_FULL, HOM, NAIVE, ORACLE"},
      {"alphas", "quantile levels, e.g. 0.1"},
      {"detect_mu", "detection thresholds for mu"},
      {"detect_q", "detection thresholds for every quantile target"},
      {"oracle_nodes", "Gauss-Hermite nodes per latent dimension"},
      {"moments.e_mu", "calibration target E[mu]"},
      {"moments.v_mu", "calibration target V[mu]"},
      {"moments.e_sigma2", "calibration target E[sigma^2]"},
      {"moments.v_sigma2", "calibration target V[sigma^2]"},
      {"moments.cor", "calibration target cor(mu, sigma^2)"},
      {"dgp.alpha", "explicit prior: location"},
      {"dgp.nu", "explicit prior: variance of mu"},
      {"dgp.kappa", "explicit prior: Gamma shape"},
      {"dgp.lambda", "explicit prior: Gamma scale"},
      {"dgp.rho", "explicit prior: copula correlation"},
      {"sieve.order", "fixed number of support points (default ceil(sqrt(n)))"},
      {"sieve.sigma_lower", "lower bound on sigma (default 0.5 * min s)"},
      {"sieve.max_em_iters", "EM iteration cap of the full fit"},
      {"sieve.em_tol", "relative log-likelihood stopping tolerance"},
      {"sieve.loo_max_iters", "EM iteration cap of each leave-one-out refit"},
      {"sieve.free_support", "move atom locations in the full fit (true/false)"},
      {"estimator.rho", "density floor in estimator denominators (default 1/n)"},
      {"pipeline.bins", "J ranges such as 14-22, or empty for one bin per J"},
      {"pipeline.min_bin_units", "smallest allowed bin"},
      {"pipeline.standardize", "standardize outcomes within group cells first"},
      {"pipeline.group_columns", "names of the group-key columns"},
  };
}

void apply_config(const ConfigValues& values, ExperimentSpec* experiment, PipelineConfig* pipeline) {
  std::optional<MomentTargets> moments;
  std::optional<DgpSpec> dgp;
  std::optional<int> oracle_nodes;
  SieveConfig* sieves[2] = {experiment ? &experiment->sieve : nullptr,
                            pipeline ? &pipeline->sieve : nullptr};
  EstimatorConfig* estimators[2] = {experiment ? &experiment->estimator : nullptr,
                                    pipeline ? &pipeline->estimator : nullptr};
  const auto each_sieve = [&](auto&& fn) {
    for (auto* s : sieves) {
      if (s) fn(*s);
    }
  };

  for (const auto& [key, value] : values.entries) {
    const auto number = [&] { return parse_double(value, key); };
    if (key == "n") {
      std::vector<std::size_t> ns;
      for (double v : parse_double_list(value, key)) {
        if (!(v >= 2.0) || v != std::floor(v)) throw Error(ErrorCode::ParseError, "n must be integers >= 2");
        ns.push_back(static_cast<std::size_t>(v));
      }
      if (experiment) experiment->n_list = ns;
    } else if (key == "J") {
      const int j = parse_positive_int(value, key);
      if (experiment) experiment->j_count = j;
    } else if (key == "rounds") {
      const int r = parse_positive_int(value, key);
      if (experiment) experiment->rounds = r;
    } else if (key == "seed") {
      const auto s = parse_integer(value, key);
      if (s < 0) throw Error(ErrorCode::ParseError, "seed must be non-negative");
      if (experiment) experiment->seed = static_cast<std::uint64_t>(s);
    } else if (key == "threads") {
      const int t = parse_positive_int(value, key);
      if (experiment) experiment->threads = t;
      if (pipeline) pipeline->threads = t;
    } else if (key == "methods") {
      const auto m = parse_method_list(value);
      if (experiment) experiment->methods = m;
      if (pipeline) pipeline->methods = m;
    } else if (key == "alphas") {
      const auto a = parse_double_list(value, key);
      if (experiment) experiment->alphas = a;
      for (auto* e : estimators) {
        if (e) e->alpha_list = a;
      }
    } else if (key == "detect_mu") {
      const auto c = parse_double_list(value, key);
      if (experiment) experiment->detect_mu = c;
    } else if (key == "detect_q") {
      const auto c = parse_double_list(value, key);
      if (experiment) experiment->detect_q = c;
    } else if (key == "oracle_nodes") {
      oracle_nodes = parse_positive_int(value, key);
      if (experiment) experiment->oracle_nodes = *oracle_nodes;
    } else if (key.starts_with("moments.")) {
      if (!moments) moments = MomentTargets{};
      const auto field = key.substr(8);
      if (field == "e_mu") moments->e_mu = number();
      else if (field == "v_mu") moments->v_mu = number();
      else if (field == "e_sigma2") moments->e_sigma2 = number();
      else if (field == "v_sigma2") moments->v_sigma2 = number();
      else if (field == "cor") moments->cor_mu_sigma2 = number();
      else throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    } else if (key.starts_with("dgp.")) {
      if (!dgp) dgp = DgpSpec{};
      const auto field = key.substr(4);
      if (field == "alpha") dgp->alpha = number();
      else if (field == "nu") dgp->nu = number();
      else if (field == "kappa") dgp->kappa = number();
      else if (field == "lambda") dgp->lambda = number();
      else if (field == "rho") dgp->rho_copula = number();
      else throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    } else if (key == "sieve.order") {
      const auto order = static_cast<std::size_t>(parse_positive_int(value, key));
      each_sieve([&](SieveConfig& s) { s.order_rule = [order](std::size_t) { return order; }; });
    } else if (key == "sieve.sigma_lower") {
      const double v = number();
      if (!(v > 0.0)) throw Error(ErrorCode::ParseError, "sieve.sigma_lower must be positive");
      each_sieve([&](SieveConfig& s) { s.sigma_lower = v; });
    } else if (key == "sieve.max_em_iters") {
      const int v = parse_positive_int(value, key);
      each_sieve([&](SieveConfig& s) { s.max_em_iters = v; });
    } else if (key == "sieve.em_tol") {
      const double v = number();
      if (!(v > 0.0)) throw Error(ErrorCode::ParseError, "sieve.em_tol must be positive");
      each_sieve([&](SieveConfig& s) { s.em_tol = v; });
    } else if (key == "sieve.loo_max_iters") {
      const int v = parse_positive_int(value, key);
      each_sieve([&](SieveConfig& s) { s.loo_max_iters = v; });
    } else if (key == "sieve.free_support") {
      const bool v = parse_bool(value, key);
      each_sieve([&](SieveConfig& s) { s.free_support = v; });
    } else if (key == "estimator.rho") {
      const double v = number();
      if (!(v >= 0.0)) throw Error(ErrorCode::ParseError, "estimator.rho must be non-negative");
      for (auto* e : estimators) {
        if (e) e->rho = v;
      }
    } else if (key == "pipeline.bins") {
      const auto ranges = parse_j_ranges(value);
      if (pipeline) pipeline->binning.ranges = ranges;
    } else if (key == "pipeline.min_bin_units") {
      const int v = parse_positive_int(value, key);
      if (pipeline) pipeline->binning.min_units = static_cast<std::size_t>(v);
    } else if (key == "pipeline.standardize") {
      const bool v = parse_bool(value, key);
      if (pipeline) pipeline->standardize = v;
    } else if (key == "pipeline.group_columns") {
      const auto names = parse_names(value);
      if (pipeline) pipeline->group_columns = names;
    } else {
      throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
  }

  if (moments && dgp) {
    throw Error(ErrorCode::ParseError, "give either moments.* or dgp.* keys, not both");
  }
  if (moments) moments->validate();
  if (dgp) dgp->validate();
  if (experiment) {
    if (moments) experiment->dgp = *moments;
    if (dgp) experiment->dgp = *dgp;
  }
  if (pipeline && (moments || dgp)) {
    OracleSpec spec{dgp ? *dgp : calibrate_dgp(*moments)};
    if (oracle_nodes) spec.nodes_mu = spec.nodes_sigma = *oracle_nodes;
    pipeline->oracle = spec;
  } else if (pipeline && pipeline->oracle && oracle_nodes) {
    pipeline->oracle->nodes_mu = pipeline->oracle->nodes_sigma = *oracle_nodes;
  }
}

}  // namespace npeb
