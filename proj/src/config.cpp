#include "pereq/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pereq {

namespace {

using nlohmann::json;

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing \"" + key + "\"");
  return j.at(key);
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

double number_or(const json& j, const char* key, double fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return number(j.at(key), where + "." + key);
}

std::optional<double> optional_number(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return number(j.at(key), where + "." + key);
}

std::vector<double> numbers(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

std::size_t count_or(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  const double v = number_or(j, key, static_cast<double>(fallback), where);
  if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError(where + "." + key + ": expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

FactorDistribution factor(const json& j, const std::string& where, std::optional<double> C_eps) {
  const json& atoms = require(j, "atoms", where);
  if (!atoms.is_array()) throw ConfigError(where + ".atoms: expected an array");
  std::vector<Atom> out;
  double norm = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const std::string w = where + ".atoms[" + std::to_string(i) + "]";
    const json& a = atoms[i];
    Atom atom;
    if (a.is_array() && a.size() == 2) {
      atom.value = {number(a[0], w + "[0]")};
      atom.probability = number(a[1], w + "[1]");
    } else if (a.is_object()) {
      const json& v = require(a, "value", w);
      atom.value = v.is_array() ? numbers(v, w + ".value") : std::vector<double>{number(v, w + ".value")};
      atom.probability = number(require(a, "probability", w), w + ".probability");
    } else {
      throw ConfigError(w + ": expected [value, probability] or {value, probability}");
    }
    double sq = 0.0;
    for (double c : atom.value) sq += c * c;
    norm = std::max(norm, std::sqrt(sq));
    out.push_back(std::move(atom));
  }
  const double bound = optional_number(j, "bound", where).value_or(C_eps.value_or(norm));
  return FactorDistribution(std::move(out), bound);
}

/// number | {"poly": [a0, a1, ...]} | {"table": {"x": [...], "y": [...]}},
/// the latter two in the sum of the past factors.
HistoryFunction coefficient(const json& j, const std::string& where) {
  auto past_sum = [](std::span<const double> e) {
    double s = 0.0;
    for (double v : e) s += v;
    return s;
  };
  if (j.is_number()) {
    const double c = j.get<double>();
    return [c](std::span<const double>) { return c; };
  }
  if (j.is_object() && j.contains("poly")) {
    const std::vector<double> a = numbers(j.at("poly"), where + ".poly");
    if (a.empty()) throw ConfigError(where + ".poly: needs at least one coefficient");
    return [a, past_sum](std::span<const double> e) {
      const double s = past_sum(e);
      double v = 0.0;
      for (auto it = a.rbegin(); it != a.rend(); ++it) v = v * s + *it;
      return v;
    };
  }
  if (j.is_object() && j.contains("table")) {
    const json& t = j.at("table");
    const std::vector<double> x = numbers(require(t, "x", where + ".table"), where + ".table.x");
    const std::vector<double> y = numbers(require(t, "y", where + ".table"), where + ".table.y");
    if (x.size() != y.size() || x.empty()) throw ConfigError(where + ".table: x and y must match and be non-empty");
    if (!std::is_sorted(x.begin(), x.end()) || std::adjacent_find(x.begin(), x.end()) != x.end())
      throw ConfigError(where + ".table.x: must be strictly increasing");
    return [x, y, past_sum](std::span<const double> e) {
      const double s = past_sum(e);
      if (s <= x.front()) return y.front();
      if (s >= x.back()) return y.back();
      const auto k = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), s) - x.begin());
      const double w = (s - x[k - 1]) / (x[k] - x[k - 1]);
      return (1.0 - w) * y[k - 1] + w * y[k];
    };
  }
  throw ConfigError(where + ": expected a number, {\"poly\": [...]} or {\"table\": {...}}");
}

std::vector<HistoryFunction> coefficients(const json& j, int T, const std::string& where) {
  std::vector<HistoryFunction> out;
  if (j.is_array()) {
    if (j.size() != static_cast<std::size_t>(T))
      throw ConfigError(where + ": expected one coefficient per period (" + std::to_string(T) + ")");
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(coefficient(j[i], where + "[" + std::to_string(i) + "]"));
  } else {
    for (int t = 0; t < T; ++t) out.push_back(coefficient(j, where));
  }
  return out;
}

Market market(const json& m, double& x0) {
  const std::string where = "market";
  x0 = number_or(m, "x0", 0.0, where);
  const double S0 = number_or(m, "S0", 1.0, where);
  const std::optional<double> C_eps = optional_number(m, "C_eps", where);

  std::vector<FactorDistribution> laws;
  if (m.contains("factors")) {
    const json& f = m.at("factors");
    if (!f.is_array() || f.empty()) throw ConfigError("market.factors: expected a non-empty array");
    for (std::size_t i = 0; i < f.size(); ++i)
      laws.push_back(factor(f[i], "market.factors[" + std::to_string(i) + "]", C_eps));
  } else {
    const auto T = count_or(m, "horizon", 0, where);
    if (T == 0) throw ConfigError("market: give \"factors\" or \"horizon\" with \"factor\"");
    const FactorDistribution law = factor(require(m, "factor", where), "market.factor", C_eps);
    laws.assign(T, law);
  }
  ScenarioTree tree = ScenarioTree::build(std::move(laws));
  const int T = tree.horizon();

  const json& p = require(m, "prices", where);
  const json& v = require(p, "variant", "market.prices");
  if (!v.is_string()) throw ConfigError("market.prices.variant: expected a string");
  const std::string variant = v.get<std::string>();
  if (variant == "drift_vol") {
    DriftVolParams params;
    params.mu = coefficients(require(p, "mu", "market.prices"), T, "market.prices.mu");
    params.sigma = coefficients(require(p, "sigma", "market.prices"), T, "market.prices.sigma");
    params.delta = number_or(p, "delta", 1.0, "market.prices");
    params.C = number(require(p, "C", "market.prices"), "market.prices.C");
    params.c = number(require(p, "c", "market.prices"), "market.prices.c");
    params.beta = number(require(p, "beta", "market.prices"), "market.prices.beta");
    auto [prices, cert] = build_eex_model(tree, S0, std::move(params),
                                          optional_number(p, "C_f", "market.prices"),
                                          optional_number(p, "chi", "market.prices"));
    return Market{std::move(tree), std::move(prices), std::move(cert)};
  }
  const double C_f = number(require(p, "C_f", "market.prices"), "market.prices.C_f");
  const double chi = number_or(p, "chi", 1.0, "market.prices");
  if (variant == "table") {
    const json& inc = require(p, "increments", "market.prices");
    if (!inc.is_array() || inc.size() != static_cast<std::size_t>(T))
      throw ConfigError("market.prices.increments: expected one array per period");
    std::vector<double> f(tree.size(), 0.0);
    for (int t = 1; t <= T; ++t) {
      const std::string w = "market.prices.increments[" + std::to_string(t - 1) + "]";
      const std::vector<double> row = numbers(inc[static_cast<std::size_t>(t - 1)], w);
      if (row.size() != tree.depth_end(t) - tree.depth_begin(t))
        throw ConfigError(w + ": expected " + std::to_string(tree.depth_end(t) - tree.depth_begin(t)) +
                          " increments (nodes at depth " + std::to_string(t) + " in breadth-first order)");
      std::copy(row.begin(), row.end(), f.begin() + static_cast<std::ptrdiff_t>(tree.depth_begin(t)));
    }
    PriceModel prices = PriceModel::from_table(tree, S0, std::move(f), C_f, chi);
    return Market::certify(std::move(tree), std::move(prices));
  }
  if (variant == "linear") {
    const double scale = number(require(p, "scale", "market.prices"), "market.prices.scale");
    if (tree.dimension() != 1) throw ConfigError("market.prices: the linear variant needs a scalar factor");
    PriceModel prices = PriceModel::from_function(
        tree, S0, [scale](int, std::span<const double> e) { return scale * e.back(); }, C_f, chi);
    return Market::certify(std::move(tree), std::move(prices));
  }
  throw ConfigError("market.prices.variant: unknown \"" + variant + "\" (table, linear, drift_vol)");
}

Preferences preferences(const json& p, ProbeGrid& probe) {
  const json& u = require(p, "utility", "preferences");
  const std::string family = require(u, "family", "preferences.utility").get<std::string>();
  const double C_U = number_or(u, "C_U", 1.0, "preferences.utility");
  std::optional<Utility> U;
  if (family == "exponential") {
    U = Utility::exponential(number_or(u, "a", 1.0, "preferences.utility"), C_U);
  } else if (family == "hyperbolic") {
    U = Utility::hyperbolic(number_or(u, "b", 1.0, "preferences.utility"), C_U);
  } else if (family == "tabulated") {
    const std::string w = "preferences.utility";
    U = Utility::tabulated(numbers(require(u, "x", w), w + ".x"), numbers(require(u, "u", w), w + ".u"),
                           numbers(require(u, "du", w), w + ".du"), numbers(require(u, "d2u", w), w + ".d2u"),
                           C_U);
  } else {
    throw ConfigError("preferences.utility.family: unknown \"" + family +
                      "\" (exponential, hyperbolic, tabulated)");
  }

  const json& g = require(p, "gain_loss", "preferences");
  const std::string gfam = g.value("family", std::string("arctan"));
  if (gfam != "arctan") throw ConfigError("preferences.gain_loss.family: unknown \"" + gfam + "\" (arctan)");
  GainLoss nu = GainLoss::arctan(number(require(g, "k", "preferences.gain_loss"), "preferences.gain_loss.k"),
                                 number_or(g, "s", 1.0, "preferences.gain_loss"));

  if (p.contains("probe")) {
    const json& q = p.at("probe");
    const std::string w = "preferences.probe";
    probe.lo = number_or(q, "lo", probe.lo, w);
    probe.hi = number_or(q, "hi", probe.hi, w);
    probe.points = count_or(q, "points", probe.points, w);
    probe.fd_step = number_or(q, "fd_step", probe.fd_step, w);
    probe.fd_tolerance = number_or(q, "fd_tolerance", probe.fd_tolerance, w);
    if (!(probe.lo < probe.hi) || probe.points < 3 || !(probe.fd_step > 0.0))
      throw ConfigError("preferences.probe: need lo < hi, points >= 3 and fd_step > 0");
  }
  return Preferences{std::move(*U), std::move(nu)};
}

void solver(const json& s, EquilibriumConfig& eq, SolverOptions& so) {
  const std::string w = "solver";
  eq.damping = number_or(s, "damping", eq.damping, w);
  eq.tolerance = number_or(s, "tolerance", eq.tolerance, w);
  eq.max_iterations = static_cast<int>(count_or(s, "max_iterations", static_cast<std::size_t>(eq.max_iterations), w));
  eq.starts = static_cast<int>(count_or(s, "starts", static_cast<std::size_t>(eq.starts), w));
  eq.start_radius = number_or(s, "start_radius", eq.start_radius, w);
  eq.oracle_resolution =
      static_cast<int>(count_or(s, "oracle_resolution", static_cast<std::size_t>(eq.oracle_resolution), w));
  eq.oracle_cap = count_or(s, "oracle_cap", eq.oracle_cap, w);
  eq.threads = static_cast<unsigned>(count_or(s, "threads", eq.threads, w));
  if (s.contains("seeds")) {
    const json& seeds = s.at("seeds");
    if (!seeds.is_array()) throw ConfigError("solver.seeds: expected an array of position arrays");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      eq.seeds.emplace_back(numbers(seeds[i], "solver.seeds[" + std::to_string(i) + "]"));
  }
  so.foc_tolerance = number_or(s, "foc_tolerance", so.foc_tolerance, w);
  so.max_iterations = static_cast<int>(count_or(s, "newton_iterations", static_cast<std::size_t>(so.max_iterations), w));
  const std::string backing = s.value("backing", std::string("exact"));
  if (backing == "exact") so.backing = Backing::exact;
  else if (backing == "grid") so.backing = Backing::grid;
  else throw ConfigError("solver.backing: expected \"exact\" or \"grid\"");
  so.grid_points = count_or(s, "grid_points", so.grid_points, w);
  so.grid_position_scale = number_or(s, "grid_scale", so.grid_position_scale, w);
}

}  // namespace

void RunConfig::sync() {
  equilibrium.seed = seed;
  verify.seed = seed;
  verify.probe = probe;
  verify.equilibrium = equilibrium;
  verify.solver = solver;
}

Problem RunConfig::problem() const {
  return Problem::make(market, preferences, x0, alpha, subgrid);
}

RunConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("configuration must be a JSON object");
  try {
    double x0 = 0.0;
    ProbeGrid probe;
    const json& m = require(root, "market", "configuration");
    Market mk = market(m, x0);
    Preferences prefs = preferences(require(root, "preferences", "configuration"), probe);
    RunConfig cfg(std::move(mk), std::move(prefs));
    cfg.x0 = x0;
    cfg.probe = probe;
    cfg.alpha = optional_number(m, "alpha", "market");
    cfg.subgrid = count_or(m, "subgrid", cfg.subgrid, "market");
    if (root.contains("solver")) solver(root.at("solver"), cfg.equilibrium, cfg.solver);
    if (root.contains("verify")) {
      const json& v = root.at("verify");
      cfg.verify.samples = count_or(v, "samples", cfg.verify.samples, "verify");
      cfg.verify.position_scale = number_or(v, "position_scale", cfg.verify.position_scale, "verify");
      cfg.verify.references = static_cast<int>(count_or(v, "references", 3, "verify"));
    }
    if (root.contains("output")) {
      const json& o = root.at("output");
      cfg.output_dir = o.value("dir", cfg.output_dir);
      cfg.trace = o.value("trace", cfg.trace);
    }
    cfg.seed = count_or(root, "seed", cfg.seed, "configuration");
    cfg.verbosity = static_cast<int>(count_or(root, "verbosity", 0, "configuration"));
    cfg.equilibrium.validate();
    cfg.sync();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  } catch (const CertificationError&) {
    throw;
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read configuration " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

}  // namespace pereq
