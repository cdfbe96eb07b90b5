// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pereq/cli.hpp"
#include "pereq/config.hpp"
#include "pereq/equilibrium.hpp"
#include "pereq/hoelder.hpp"

namespace fs = std::filesystem;
using namespace pereq;

namespace {

const fs::path kFixtures = PEREQ_FIXTURE_DIR;
const std::vector<std::string> kCertifiable = {"symmetric_t2.json", "closed_form_t1.json",
                                               "asymmetric_eex_t2.json", "stress_t3.json"};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

int failures = 0;

void verdict(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

struct Outcome {
  int code;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pereq_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

/// level_t + tilt_t * tanh(sum of past factors), per depth.
Strategy smooth_strategy(const ScenarioTree& tree, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> level(static_cast<std::size_t>(tree.horizon())), tilt(level.size());
  for (std::size_t t = 0; t < level.size(); ++t) {
    level[t] = u(rng);
    tilt[t] = u(rng);
  }
  std::vector<double> pos(tree.nonterminal_count());
  for (NodeId o = 0; o < pos.size(); ++o) {
    double s = 0.0;
    for (double e : tree.history(o)) s += e;
    const auto t = static_cast<std::size_t>(tree.node(o).depth);
    pos[o] = level[t] + tilt[t] * std::tanh(s);
  }
  return Strategy(std::move(pos));
}

// ---- criterion 1 --------------------------------------------------------

void symmetric_fixed_point() {
  const fs::path out = scratch("symmetric");
  const fs::path cfg = kFixtures / "symmetric_t2.json";
  const auto start = Clock::now();
  const Outcome r = run_cli({"solve", "--config", cfg.string(), "--seed", "7", "--out", out.string()});
  const double elapsed = seconds_since(start);
  if (r.code != cli::kOk) {
    verdict(1, "symmetric fixed point", false, "solve exited " + std::to_string(r.code) + ": " + r.err);
    return;
  }
  double worst_position = 0.0;
  for (std::size_t i = 1; const auto& row : read_csv(out / "preferred_strategy.csv"))
    if (i++ > 1) worst_position = std::max(worst_position, std::abs(std::stod(row.at(2))));
  double residual = NAN, value = NAN;
  for (const auto& row : read_csv(out / "report.csv"))
    if (row.size() == 7 && row[6] == "1") {
      residual = std::stod(row[2]);
      value = std::stod(row[3]);
    }
  const RunConfig model = load_config(cfg);
  const double utility = model.preferences.utility(model.x0);
  const bool ok = worst_position == 0.0 && residual <= 1e-12 && std::abs(value - utility) <= 1e-12 && elapsed < 1.0;
  verdict(1, "symmetric fixed point", ok,
          "max|phi|=" + fmt(worst_position) + " residual=" + fmt(residual) + " |value-U(x0)|=" +
              fmt(std::abs(value - utility)) + " time=" + fmt(elapsed) + "s");
}

// ---- criterion 2 --------------------------------------------------------

void closed_form_best_response() {
  const auto start = Clock::now();
  const RunConfig cfg = load_config(kFixtures / "closed_form_t1.json");
  const Problem pb = cfg.problem();
  // A reference above every reachable wealth keeps the gain-loss term on
  // its linear branch: the objective is a positive multiple of E[U].
  const auto V = terminal_value(pb.preferences, ReferenceDistribution::degenerate(50.0), 1);
  const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, pb.x0, pb.envelopes->stage(0), cfg.solver);
  const double elapsed = seconds_since(start);
  // Up move f = +0.5 with probability p, a = 1: h = ln(p / (1 - p)) / a.
  const double p = pb.tree().edge_probability(pb.tree().depth_begin(1));
  const double up = pb.prices().increment(pb.tree().depth_begin(1));
  const double a = -pb.preferences.utility.second_derivative(0.0) / pb.preferences.utility.derivative(0.0);
  const double exact = std::log(p / (1.0 - p)) / (a * 2.0 * up);
  const double err = std::abs(sol.position - exact);
  verdict(2, "closed-form best response", err <= 1e-8 && elapsed < 0.1,
          "h=" + std::to_string(sol.position) + " closed form=" + std::to_string(exact) + " |err|=" + fmt(err) +
              " time=" + fmt(elapsed) + "s");
}

// ---- criteria 3-6 and 9: randomized sweep -------------------------------

struct EnvelopeClass {
  std::string label;
  Preferences prefs;
  int horizon;
  double alpha, C_f, chi;
  int instances;
  std::shared_ptr<const EnvelopeStack> stack;
};

/// Wealths sampled at each depth; the deep stages get few points because
/// each new wealth costs a full sub-grid scan of the envelopes.
std::vector<double> wealth_pool(int T, int t) {
  switch (T - t) {
    case 1: return {-1.0, -0.5, 0.0, 0.5, 1.0};
    case 2: return {-0.5, 0.0, 0.5};
    default: return {0.0};
  }
}

struct SweepInstance {
  Market market;
  bool binary;
};

/// Draws a random certified market that fits the class constants:
/// alpha* >= alpha, |f| <= C_f and the node-pair Hoelder ratio <= C_f.
SweepInstance draw_market(const EnvelopeClass& c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> atoms(2, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::vector<FactorDistribution> laws;
    bool binary = true;
    for (int t = 0; t < c.horizon; ++t) {
      const int n = atoms(rng);
      binary = binary && n == 2;
      std::vector<std::pair<double, double>> a;
      double mass = 0.0;
      for (int k = 0; k < n; ++k) {
        const double v = n == 2 ? (k == 0 ? -0.4 - 0.6 * u(rng) : 0.4 + 0.6 * u(rng))
                                : (k == 0 ? -0.4 - 0.6 * u(rng) : k == 1 ? 0.6 * u(rng) - 0.3 : 0.4 + 0.6 * u(rng));
        a.emplace_back(v, 0.15 + u(rng));
        mass += a.back().second;
      }
      for (auto& [v, q] : a) q /= mass;
      laws.push_back(FactorDistribution::scalar(std::span<const std::pair<double, double>>(a), 1.0));
    }
    ScenarioTree tree = build_tree(std::move(laws));
    const double sigma = 0.5 * c.C_f + 0.4 * c.C_f * u(rng);
    const double drift = 0.1 * c.C_f * (2.0 * u(rng) - 1.0);
    auto f = [&](int, std::span<const double> h) {
      double past = 0.0;
      for (std::size_t i = 0; i + 1 < h.size(); ++i) past += h[i];
      return sigma * h.back() + drift * std::tanh(past);
    };
    std::vector<double> inc(tree.size(), 0.0);
    bool bounded = true;
    for (NodeId id = 1; id < tree.size(); ++id) {
      inc[id] = f(0, tree.history(id));
      bounded = bounded && std::abs(inc[id]) <= c.C_f;
    }
    if (!bounded) continue;
    PriceModel prices = PriceModel::from_table(tree, 1.0, inc, c.C_f, c.chi);
    const auto cert = check_uniform_no_arbitrage(tree, prices);
    if (!cert.certified || cert.alpha_star < c.alpha) continue;
    if (estimate_price_hoelder(tree, prices).constant > c.C_f) continue;
    return {Market{std::move(tree), std::move(prices), cert}, binary};
  }
}

struct Tally {
  std::size_t checked = 0, violations = 0;
  double worst = 0.0;  // largest violation or FD error seen
  std::string witness;
  void add(bool ok, double measure, const std::function<std::string()>& where) {
    ++checked;
    if (!ok) {
      ++violations;
      if (witness.empty()) witness = where();
    }
    worst = std::max(worst, measure);
  }
  std::string summary(const std::string& measure) const {
    std::string s = std::to_string(checked) + " checks, " + std::to_string(violations) + " violations, " + measure +
                    "=" + fmt(worst);
    if (!witness.empty()) s += ", first at " + witness;
    return s;
  }
};

double relative(double approx, double exact) {
  return std::abs(approx - exact) / std::max(std::abs(exact), 1e-300);
}

struct SweepResult {
  std::size_t instances = 0;
  Tally foc, bracket, sandwich, fd1, fd2, hoelder_h, hoelder_v;
  std::size_t oracle_instances = 0, oracle_failures = 0, oracle_unconverged = 0;
  double oracle_slowest = 0.0, oracle_best_gain = -INFINITY;
  std::string oracle_witness;
  std::size_t sets = 0, multi_sets = 0, dominance_failures = 0;
};

void check_preferred(const EquilibriumSet& set, SweepResult& res) {
  ++res.sets;
  if (set.distinct.size() < 2) return;
  ++res.multi_sets;
  const double best = set.reports[*set.preferred].value;
  for (std::size_t d : set.distinct)
    if (set.reports[d].value > best + 1e-12 * std::max(1.0, std::abs(best))) ++res.dominance_failures;
}

void sweep_instance(const EnvelopeClass& c, std::size_t id, std::mt19937_64& rng, SweepResult& res) {
  SweepInstance inst = draw_market(c, rng);
  const Problem pb{std::move(inst.market), c.prefs, 0.0, c.stack};
  const ScenarioTree& tree = pb.tree();
  const int T = tree.horizon();
  const Strategy ref_strategy = smooth_strategy(tree, rng, 1.0);
  const auto rec = value_recursion(pb, reference_distribution(tree, pb.prices(), ref_strategy, pb.x0));
  const std::string tag = c.label + "#" + std::to_string(id);

  for (int t = 0; t < T; ++t) {
    const EnvelopeStage& env = c.stack->stage(t);
    const RecursiveValue& solver = rec->solver(t);
    for (double x : wealth_pool(T, t)) {
      for (NodeId o = tree.depth_begin(t); o < tree.depth_end(t); ++o) {
        auto where = [&] { return tag + " node " + tree.path_label(o) + " x=" + fmt(x); };
        const OneStepSolution sol = solver.solve(o, x);
        const double g = gamma_small(rec->stage(t + 1), tree, pb.prices(), o, x, sol.position);
        res.foc.add(std::abs(g) <= 1e-10, std::abs(g), where);
        const Bound K = env.K(x);
        res.bracket.add(std::abs(sol.position) <= K, std::abs(sol.position) / static_cast<double>(K), where);

        const ValuePoint pt = solver.evaluate(o, x);
        const Bound j = env.j(x), J = env.J(x), ell = env.ell(x), L = env.L(x);
        const bool inside = j <= pt.d1 && pt.d1 <= J && ell <= -pt.d2 && -pt.d2 <= L;
        const double ratio = static_cast<double>(
            std::max({j / pt.d1, pt.d1 / J, ell / -pt.d2, -pt.d2 / L}));
        res.sandwich.add(inside, ratio, [&] {
          return where() + " v'=" + fmt(pt.d1) + " in [" + fmt(static_cast<double>(j)) + "," +
                 fmt(static_cast<double>(J)) + "] -v''=" + fmt(-pt.d2) + " in [" + fmt(static_cast<double>(ell)) +
                 "," + fmt(static_cast<double>(L)) + "]";
        });
        const double step = 1e-5;
        const ValuePoint lo = solver.evaluate(o, x - step), hi = solver.evaluate(o, x + step);
        const double e1 = relative((hi.value - lo.value) / (2 * step), pt.d1);
        const double e2 = relative((hi.d1 - lo.d1) / (2 * step), pt.d2);
        res.fd1.add(e1 <= 1e-4, e1, where);
        res.fd2.add(e2 <= 1e-3, e2, where);
      }
      if (t == 0) continue;
      const auto theta = static_cast<Bound>(env.theta());
      const Bound C_h = env.C_h(x), C_V = env.C_V(x);
      for (NodeId a = tree.depth_begin(t); a < tree.depth_end(t); ++a) {
        for (NodeId b = a + 1; b < tree.depth_end(t); ++b) {
          const Bound d = std::pow(static_cast<Bound>(tree.distance(a, b)), theta);
          auto where = [&] {
            return tag + " nodes " + tree.path_label(a) + "," + tree.path_label(b) + " x=" + fmt(x);
          };
          const double dh = std::abs(solver.solve(a, x).position - solver.solve(b, x).position);
          const double dv = std::abs(solver.evaluate(a, x).value - solver.evaluate(b, x).value);
          res.hoelder_h.add(dh <= C_h * d, static_cast<double>(dh / (C_h * d)), where);
          res.hoelder_v.add(dv <= C_V * d, static_cast<double>(dv / (C_V * d)), where);
        }
      }
    }
  }

  if (T <= 2 && inst.binary) {
    const auto start = Clock::now();
    EquilibriumConfig cfg;
    cfg.starts = 4;
    cfg.seed = id;
    const EquilibriumSet set = find_equilibria(pb, cfg);
    check_preferred(set, res);
    ++res.oracle_instances;
    if (!set.preferred) {
      ++res.oracle_unconverged;
    } else {
      for (std::size_t d : set.distinct) {
        const CertificationReport rep = certify_equilibrium(pb, set.reports[d].strategy, cfg);
        res.oracle_best_gain = std::max(res.oracle_best_gain, rep.improvement);
        if (!rep.oracle_run || rep.improvement > rep.slack) {
          ++res.oracle_failures;
          if (res.oracle_witness.empty())
            res.oracle_witness = tag + " improvement=" + fmt(rep.improvement) + " slack=" + fmt(rep.slack);
        }
      }
    }
    res.oracle_slowest = std::max(res.oracle_slowest, seconds_since(start));
  }
  ++res.instances;
}

std::vector<EnvelopeClass> envelope_classes() {
  std::vector<EnvelopeClass> classes = {
      {"exp-T1", {Utility::exponential(1.0), GainLoss::arctan(2.0, 1.0)}, 1, 0.2, 1.0, 1.0, 150, nullptr},
      {"hyp-T1", {Utility::hyperbolic(1.0), GainLoss::arctan(3.0, 0.5)}, 1, 0.2, 1.0, 1.0, 150, nullptr},
      {"hyp-T2a", {Utility::hyperbolic(1.0), GainLoss::arctan(2.0, 1.0)}, 2, 0.2, 1.0, 1.0, 250, nullptr},
      {"hyp-T2b", {Utility::hyperbolic(2.0), GainLoss::arctan(1.5, 0.5)}, 2, 0.2, 1.0, 1.0, 250, nullptr},
      {"hyp-T3", {Utility::hyperbolic(1.0), GainLoss::arctan(2.0, 1.0)}, 3, 0.2, 0.5, 1.0, 200, nullptr},
  };
  for (auto& c : classes)
    c.stack = std::make_shared<const EnvelopeStack>(c.prefs, c.alpha, c.C_f, c.chi, c.horizon);
  return classes;
}

SweepResult run_sweep() {
  SweepResult res;
  std::mt19937_64 rng(20240607);
  for (const auto& c : envelope_classes()) {
    const auto start = Clock::now();
    for (int k = 0; k < c.instances; ++k) {
      try {
        sweep_instance(c, static_cast<std::size_t>(k), rng, res);
      } catch (const std::exception& e) {
        const std::string where = c.label + "#" + std::to_string(k) + ": " + e.what();
        res.foc.add(false, INFINITY, [&] { return where; });
      }
    }
    std::printf("  sweep class %s: %d instances in %.1fs\n", c.label.c_str(), c.instances, seconds_since(start));
    std::fflush(stdout);
  }
  return res;
}

// ---- criteria 7-10 on the fixtures --------------------------------------

void continuity_on_fixtures() {
  double worst = 0.0;
  std::size_t checks = 0;
  std::string witness;
  for (const auto& name : kCertifiable) {
    const RunConfig cfg = load_config(kFixtures / name);
    const Problem pb = cfg.problem();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> sign(0, 1);
    for (int k = 0; k < 3; ++k) {
      const Strategy phi = k == 0 ? Strategy::constant(pb.tree(), 0.0) : smooth_strategy(pb.tree(), rng, 1.0);
      std::vector<double> moved = phi.positions();
      for (double& v : moved) v += sign(rng) ? 1e-6 : -1e-6;
      const double change =
          best_response(pb, phi, cfg.solver).strategy.distance(best_response(pb, Strategy(moved), cfg.solver).strategy);
      ++checks;
      if (change > worst) {
        worst = change;
        witness = name + " reference " + std::to_string(k);
      }
    }
  }
  verdict(7, "best-response continuity", worst <= 1e-3,
          std::to_string(checks) + " perturbations of 1e-6, max change=" + fmt(worst) + " (" + witness + ")");
}

void extension_on_fixtures() {
  std::size_t pairs = 0, violations = 0, samples = 0, mismatches = 0;
  double worst = -INFINITY;
  for (const auto& name : kCertifiable) {
    const RunConfig cfg = load_config(kFixtures / name);
    const ScenarioTree& tree = cfg.market.tree;
    const PriceModel& prices = cfg.market.prices;
    const double C = prices.bound(), chi = prices.exponent();
    std::mt19937_64 rng(cfg.seed);
    for (int t = 1; t <= tree.horizon(); ++t) {
      std::vector<Point> K;
      std::vector<double> f;
      double R = 0.0;
      for (NodeId o = tree.depth_begin(t); o < tree.depth_end(t); ++o) {
        K.push_back(tree.history(o));
        f.push_back(prices.increment(o));
        R = std::max(R, euclidean_norm(K.back()));
      }
      const HoelderExtension g = hoelder_extend(K, f, C, chi, R);
      for (std::size_t k = 0; k < K.size(); ++k, ++samples) mismatches += g(K[k]) != f[k];
      std::uniform_real_distribution<double> u(-2.0 * R, 2.0 * R);
      const int per_depth = (10000 + tree.horizon() - 1) / tree.horizon();
      for (int n = 0; n < per_depth; ++n, ++pairs) {
        Point a(K.front().size()), b(a.size());
        for (double& v : a) v = u(rng);
        for (double& v : b) v = u(rng);
        const double ga = g(a), gb = g(b);
        const double lip = C * std::pow(euclidean_distance(a, b), chi);
        // Both inequalities hold up to rounding in the min over K.
        const double excess = std::max((std::abs(ga - gb) - lip) / std::max(lip, 1e-300),
                                       (std::max(std::abs(ga), std::abs(gb)) - g.uniform_bound()) / g.uniform_bound());
        worst = std::max(worst, excess);
        violations += excess > 1e-12;
      }
    }
  }
  verdict(8, "Hoelder extension", mismatches == 0 && violations == 0,
          std::to_string(samples) + " sample points (" + std::to_string(mismatches) + " mismatches), " +
              std::to_string(pairs) + " random pairs (" + std::to_string(violations) +
              " violations), largest relative excess=" + fmt(worst));
}

void preferred_on_fixtures(SweepResult& res) {
  for (const auto& name : kCertifiable) {
    const RunConfig cfg = load_config(kFixtures / name);
    check_preferred(find_equilibria(cfg.problem(), cfg.equilibrium, cfg.solver), res);
  }
}

void determinism() {
  std::size_t files = 0, differing = 0;
  std::string witness;
  for (const auto& entry : fs::directory_iterator(kFixtures)) {
    const std::string name = entry.path().stem().string();
    const fs::path a = scratch(name + "_a"), b = scratch(name + "_b");
    const Outcome ra = run_cli({"solve", "--config", entry.path().string(), "--seed", "7", "--out", a.string()});
    const Outcome rb = run_cli({"solve", "--config", entry.path().string(), "--seed", "7", "--out", b.string()});
    if (ra.code != rb.code || ra.err != rb.err) {
      ++differing;
      witness = name + " exit/stderr";
    }
    if (!fs::exists(a)) continue;
    for (const auto& f : fs::directory_iterator(a)) {
      ++files;
      if (slurp(f.path()) != slurp(b / f.path().filename())) {
        ++differing;
        witness = name + "/" + f.path().filename().string();
      }
    }
  }
  verdict(10, "determinism", differing == 0 && files > 0,
          std::to_string(files) + " output files compared across two runs, " + std::to_string(differing) +
              " differing" + (witness.empty() ? "" : " (" + witness + ")"));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  try {
    symmetric_fixed_point();
    closed_form_best_response();

    SweepResult sw = run_sweep();
    verdict(3, "FOC certification", sw.instances >= 1000 && sw.foc.violations == 0 && sw.bracket.violations == 0,
            std::to_string(sw.instances) + " instances; FOC " + sw.foc.summary("max|gamma|") + "; bracket " +
                sw.bracket.summary("max|h|/K"));
    verdict(4, "envelope sandwich",
            sw.sandwich.violations == 0 && sw.fd1.violations == 0 && sw.fd2.violations == 0,
            "sandwich " + sw.sandwich.summary("max ratio to bound") + "; v' vs FD " + sw.fd1.summary("max rel err") +
                "; v'' vs FD " + sw.fd2.summary("max rel err"));
    verdict(5, "Hoelder moduli", sw.hoelder_h.violations == 0 && sw.hoelder_v.violations == 0 && sw.hoelder_h.checked > 0,
            "optimizer " + sw.hoelder_h.summary("max ratio") + "; value " + sw.hoelder_v.summary("max ratio"));
    verdict(6, "oracle equivalence",
            sw.oracle_instances > 0 && sw.oracle_failures == 0 && sw.oracle_unconverged == 0 && sw.oracle_slowest < 10.0,
            std::to_string(sw.oracle_instances) + " instances, " + std::to_string(sw.oracle_unconverged) +
                " without a converged equilibrium, " + std::to_string(sw.oracle_failures) +
                " oracle improvements beyond slack, largest improvement=" + fmt(sw.oracle_best_gain) +
                ", slowest=" + fmt(sw.oracle_slowest) + "s" +
                (sw.oracle_witness.empty() ? "" : " (" + sw.oracle_witness + ")"));

    continuity_on_fixtures();
    extension_on_fixtures();

    preferred_on_fixtures(sw);
    verdict(9, "preferred selection", sw.dominance_failures == 0,
            std::to_string(sw.sets) + " equilibrium sets, " + std::to_string(sw.multi_sets) +
                " with two or more distinct equilibria, " + std::to_string(sw.dominance_failures) +
                " dominated preferred selections");

    determinism();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("total time %.1fs, %d failing criteria\n", seconds_since(start), failures);
  return failures == 0 ? 0 : 1;
}
