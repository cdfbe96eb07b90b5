#include "pereq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pereq/config.hpp"
#include "pereq/hoelder.hpp"

namespace pereq::cli {

namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num(Bound v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17Lg", v);
  return buf;
}

/// Quotes a CSV field when it contains a separator or quote.
std::string field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> damping, tol, foc_tol;
  std::optional<int> max_iters, starts;
  std::optional<std::string> backing;
  std::optional<std::size_t> grid_points;
  bool trace = false;
  bool verbose = false;
  std::string reference, candidate;
  std::string suite = "all";
  std::optional<std::size_t> samples;
};

class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }
  void write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + p.string());
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

std::string strategy_csv(const ScenarioTree& tree, const Strategy& s) {
  std::string out = "node_id,depth,position\n";
  for (NodeId o = 0; o < s.size(); ++o)
    out += std::to_string(o) + "," + std::to_string(tree.node(o).depth) + "," + num(s[o]) + "\n";
  return out;
}

Strategy read_strategy(const fs::path& path, const ScenarioTree& tree) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read strategy " + path.string());
  std::vector<double> pos(tree.nonterminal_count(), std::nan(""));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("node_id", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected node_id,depth,position");
    try {
      const auto id = static_cast<NodeId>(std::stoull(a));
      const int depth = std::stoi(b);
      const double h = std::stod(c);
      if (id >= pos.size()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": node " + a + " is not a decision node");
      if (tree.node(id).depth != depth)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": node " + a + " has depth " +
                          std::to_string(tree.node(id).depth));
      pos[id] = h;
    } catch (const std::logic_error&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  for (NodeId o = 0; o < pos.size(); ++o)
    if (std::isnan(pos[o])) throw ConfigError(path.string() + ": no position for node " + std::to_string(o));
  return Strategy(std::move(pos));
}

std::string value_function_csv(const Problem& problem, const ReferenceDistribution& ref,
                               const Strategy* along, const SolverOptions& options) {
  const ScenarioTree& tree = problem.tree();
  const auto rec = value_recursion(problem, ref, options);
  std::vector<double> path;
  if (along) path = wealth(tree, problem.prices(), *along, problem.x0).wealth;
  const double w = tree.horizon() * problem.prices().bound();
  std::string out = "node_id,depth,x,v,dv,d2v\n";
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    std::vector<double> xs;
    for (int k = 0; k <= 10; ++k) xs.push_back(problem.x0 - w + 2.0 * w * k / 10.0);
    if (along) xs.push_back(path[o]);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    const int t = tree.node(o).depth;
    for (double x : xs) {
      const ValuePoint v = rec->solver(t).evaluate(o, x);
      out += std::to_string(o) + "," + std::to_string(t) + "," + num(x) + "," + num(v.value) + "," +
             num(v.d1) + "," + num(v.d2) + "\n";
    }
  }
  return out;
}

std::string reference_csv(const ReferenceDistribution& ref) {
  std::string out = "wealth,probability\n";
  for (const auto& [w, q] : ref.atoms()) out += num(w) + "," + num(q) + "\n";
  return out;
}

std::string join(const Strategy& s) {
  std::string out;
  for (NodeId o = 0; o < s.size(); ++o) out += (o ? " " : "") + num(s[o]);
  return out;
}

RunConfig configure(const Flags& f) {
  RunConfig cfg = load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.output_dir = *f.out;
  if (f.damping) cfg.equilibrium.damping = *f.damping;
  if (f.tol) cfg.equilibrium.tolerance = *f.tol;
  if (f.max_iters) cfg.equilibrium.max_iterations = *f.max_iters;
  if (f.starts) cfg.equilibrium.starts = *f.starts;
  if (f.foc_tol) cfg.solver.foc_tolerance = *f.foc_tol;
  if (f.grid_points) cfg.solver.grid_points = *f.grid_points;
  if (f.backing) cfg.solver.backing = *f.backing == "grid" ? Backing::grid : Backing::exact;
  if (f.samples) cfg.verify.samples = *f.samples;
  if (f.trace) cfg.trace = true;
  if (f.verbose) cfg.verbosity = std::max(cfg.verbosity, 1);
  cfg.equilibrium.validate();
  cfg.sync();
  return cfg;
}

/// Returns false (after printing the failures) when validation fails.
bool check_preferences(const RunConfig& cfg, std::ostream& err) {
  const ValidationReport v = validate_preferences(cfg.preferences.utility, cfg.preferences.gain_loss, cfg.probe);
  for (const ValidationIssue& i : v.failures)
    err << "preference check " << i.check << " fails at x=" << num(i.witness) << ": " << i.detail << "\n";
  return v.ok();
}

int cmd_solve(const RunConfig& cfg, const Problem& problem, std::ostream& out, std::ostream& err) {
  const Output dir(cfg.output_dir);
  const ScenarioTree& tree = problem.tree();
  if (cfg.verbosity > 0) err << "solving from " << multistart_strategies(problem, cfg.equilibrium).size() << " starts\n";
  const EquilibriumSet set = find_equilibria(problem, cfg.equilibrium, cfg.solver);

  std::string report = "start,converged,residual,value,iterations,distinct,preferred\n";
  std::string trace = "start,iteration,residual,value\n";
  std::size_t converged = 0;
  for (std::size_t i = 0; i < set.reports.size(); ++i) {
    const EquilibriumReport& r = set.reports[i];
    converged += r.converged;
    const bool distinct = std::find(set.distinct.begin(), set.distinct.end(), i) != set.distinct.end();
    report += std::to_string(i) + "," + (r.converged ? "1" : "0") + "," + num(r.residual) + "," + num(r.value) +
              "," + std::to_string(r.iterations) + "," + (distinct ? "1" : "0") + "," +
              (set.preferred == i ? "1" : "0") + "\n";
    dir.write("strategy_" + std::to_string(i) + ".csv", strategy_csv(tree, r.strategy));
    for (const TraceRow& t : r.trace)
      trace += std::to_string(t.start) + "," + std::to_string(t.iteration) + "," + num(t.residual) + "," +
               num(t.value) + "\n";
  }
  dir.write("report.csv", report);
  if (cfg.trace) dir.write("trace.csv", trace);

  std::ostringstream s;
  s << "starts: " << set.reports.size() << "\n";
  s << "converged: " << converged << "\n";
  s << "distinct equilibria: " << set.distinct.size() << "\n";
  for (std::size_t d : set.distinct)
    s << "  start " << d << ": value " << num(set.reports[d].value) << ", residual " << num(set.reports[d].residual)
      << "\n";
  if (set.preferred) {
    const EquilibriumReport& p = set.reports[*set.preferred];
    dir.write("preferred_strategy.csv", strategy_csv(tree, p.strategy));
    const ReferenceDistribution ref = reference_distribution(tree, problem.prices(), p.strategy, problem.x0);
    dir.write("value_function.csv", value_function_csv(problem, ref, &p.strategy, cfg.solver));
    s << "preferred: start " << *set.preferred << "\n";
    s << "preferred value: " << num(p.value) << "\n";
    s << "preferred residual: " << num(p.residual) << "\n";
    s << "preferred strategy: " << join(p.strategy) << "\n";
  } else {
    s << "preferred: none (no start converged)\n";
  }
  dir.write("summary.txt", s.str());
  out << s.str();
  return converged > 0 ? kOk : kNotAchieved;
}

int cmd_best_response(const RunConfig& cfg, const Problem& problem, const std::string& reference,
                      std::ostream& out) {
  const ScenarioTree& tree = problem.tree();
  const Strategy phi = read_strategy(reference, tree);
  const Output dir(cfg.output_dir);
  const BestResponse br = best_response(problem, phi, cfg.solver);
  dir.write("best_response.csv", strategy_csv(tree, br.strategy));
  dir.write("reference_law.csv", reference_csv(br.reference));
  dir.write("value_function.csv", value_function_csv(problem, br.reference, &br.strategy, cfg.solver));
  double worst = 0.0;
  for (const OneStepSolution& sol : br.solutions) worst = std::max(worst, sol.residual);
  std::ostringstream s;
  s << "value: " << num(br.value) << "\n";
  s << "max FOC residual: " << num(worst) << "\n";
  s << "distance to reference strategy: " << num(br.strategy.distance(phi)) << "\n";
  s << "best response: " << join(br.strategy) << "\n";
  dir.write("summary.txt", s.str());
  out << s.str();
  return kOk;
}

int cmd_certify(const RunConfig& cfg, const Problem& problem, const std::string& candidate, std::ostream& out) {
  const ScenarioTree& tree = problem.tree();
  const Strategy phi = read_strategy(candidate, tree);
  const Output dir(cfg.output_dir);
  const CertificationReport c = certify_equilibrium(problem, phi, cfg.equilibrium, cfg.solver);
  std::string csv = "field,value\n";
  auto row = [&](const std::string& k, const std::string& v) { csv += k + "," + field(v) + "\n"; };
  row("analytic_residual", num(c.analytic_residual));
  row("analytic_passed", c.analytic_passed ? "1" : "0");
  row("oracle_run", c.oracle_run ? "1" : "0");
  row("oracle_notice", c.oracle_notice);
  row("combinations", std::to_string(c.combinations));
  row("candidate_value", num(c.candidate_value));
  row("oracle_best_value", num(c.oracle_best_value));
  row("improvement", num(c.improvement));
  row("slack", num(c.slack));
  row("grid_step", num(c.grid_step));
  row("oracle_passed", c.oracle_passed ? "1" : "0");
  row("certified", c.certified() ? "1" : "0");
  dir.write("certify.csv", csv);
  if (c.oracle_run) dir.write("oracle_strategy.csv", strategy_csv(tree, c.oracle_best));
  std::ostringstream s;
  s << "fixed-point residual: " << num(c.analytic_residual) << (c.analytic_passed ? " (pass)" : " (fail)") << "\n";
  if (c.oracle_run)
    s << "oracle: " << c.combinations << " grid strategies, improvement " << num(c.improvement) << " vs slack "
      << num(c.slack) << (c.oracle_passed ? " (pass)" : " (fail)") << "\n";
  else
    s << c.oracle_notice << "\n";
  s << "certified: " << (c.certified() ? "yes" : "no") << "\n";
  dir.write("summary.txt", s.str());
  out << s.str();
  return c.certified() ? kOk : kNotAchieved;
}

int cmd_verify(const RunConfig& cfg, const Problem& problem, const std::string& suite_name_arg, std::ostream& out) {
  const auto suite = parse_suite(suite_name_arg);
  if (!suite) throw ConfigError("unknown suite \"" + suite_name_arg + "\" (all, foc, bounds, hoelder, continuity)");
  const Output dir(cfg.output_dir);
  const std::vector<CheckReport> reports = run_suite(problem, *suite, cfg.verify);
  std::string csv = "check,samples,worst_margin,witness,tolerance,passed\n";
  std::ostringstream s;
  for (const CheckReport& r : reports) {
    csv += r.name + "," + std::to_string(r.instances) + "," + num(r.worst_margin) + "," + field(r.witness) + "," +
           num(r.tolerance) + "," + (r.passed() ? "1" : "0") + "\n";
    s << (r.passed() ? "PASS " : "FAIL ") << r.name << " instances=" << r.instances
      << " worst_margin=" << num(r.worst_margin) << " witness: " << r.witness << "\n";
  }
  const bool ok = all_passed(reports);
  s << (ok ? "all checks passed" : "some checks failed") << "\n";
  dir.write("verify.csv", csv);
  dir.write("summary.txt", s.str());
  out << s.str();
  return ok ? kOk : kNotAchieved;
}

int cmd_report(const RunConfig& cfg, const Problem& problem, std::ostream& out) {
  const Output dir(cfg.output_dir);
  const ScenarioTree& tree = problem.tree();
  const PriceModel& prices = problem.prices();
  const NoArbitrageCertificate& cert = problem.market.certificate;

  std::string csv = "node_id,depth,path,probability,increment,price,alpha\n";
  for (NodeId o = 0; o < tree.size(); ++o) {
    const std::string a = o < cert.node_alpha.size() ? num(cert.node_alpha[o]) : "";
    csv += std::to_string(o) + "," + std::to_string(tree.node(o).depth) + "," + tree.path_label(o) + "," +
           num(tree.node(o).probability) + "," + num(prices.increment(o)) + "," + num(prices.price(tree, o)) +
           "," + a + "\n";
  }
  dir.write("tree.csv", csv);

  // Stages with three or more stages after them cost a full sub-grid scan
  // per point; they are tabulated at x0 only.
  const int T = tree.horizon();
  const double w = T * prices.bound();
  std::string env = "stage,x,K,j_v,J_v,l_v,L_v,C_h,C_v\n";
  std::vector<std::string> notes;
  for (int t = T - 1; t >= 0; --t) {
    const EnvelopeStage& e = problem.envelopes->stage(t);
    std::vector<double> xs{problem.x0};
    if (T - t <= 2) {
      xs.clear();
      for (int k = 0; k <= 8; ++k) xs.push_back(problem.x0 - w + 2.0 * w * k / 8.0);
    }
    for (double x : xs) {
      std::string row = std::to_string(t) + "," + num(x) + "," + num(e.K(x)) + "," + num(e.j(x)) + "," + num(e.J(x));
      try {
        row += "," + num(e.ell(x)) + "," + num(e.L(x)) + "," + num(e.C_h(x)) + "," + num(e.C_V(x));
      } catch (const EnvelopeError& ex) {
        row += ",nan,nan,nan,nan";
        if (notes.empty() || notes.back() != ex.what()) notes.push_back(ex.what());
      }
      env += row + "\n";
    }
  }
  dir.write("envelopes.csv", env);

  std::ostringstream s;
  s << "horizon: " << T << "\n";
  s << "nodes: " << tree.size() << " (" << tree.nonterminal_count() << " decision nodes)\n";
  s << "alpha*: " << num(cert.alpha_star) << "\n";
  s << "envelope alpha: " << num(problem.envelopes->alpha()) << "\n";
  s << "C_f: " << num(prices.bound()) << "\n";
  s << "chi: " << num(prices.exponent()) << "\n";
  for (int t = 1; t <= T; ++t) {
    double R = 0.0;
    for (NodeId o = tree.depth_begin(t); o < tree.depth_end(t); ++o) R = std::max(R, euclidean_norm(tree.history(o)));
    const double extended = prices.bound() * (1.0 + std::pow(2.0 * R, prices.exponent()));
    s << "depth " << t << ": history radius " << num(R) << ", extension bound C_f(1+(2R)^chi) " << num(extended)
      << "\n";
  }
  const PriceHoelderEstimate h = estimate_price_hoelder(tree, prices);
  s << "estimated increment Hoelder constant: " << num(h.constant);
  if (h.witness_a != kNoNode) s << " (nodes " << tree.path_label(h.witness_a) << ", " << tree.path_label(h.witness_b) << ")";
  s << "\n";
  s << "sup |f|: " << num(h.sup_abs) << "\n";
  const ValidationReport v = validate_preferences(cfg.preferences.utility, cfg.preferences.gain_loss, cfg.probe);
  s << "preference checks: " << v.checks.size() - v.failures.size() << "/" << v.checks.size() << " pass\n";
  if (v.elasticity_threshold) s << "asymptotic elasticity below 1/2 from x = " << num(*v.elasticity_threshold) << "\n";
  try {
    const Bound c = strategy_bound(*problem.envelopes, problem.x0);
    s << "strategy bound C(x0): " << num(c) << "\n";
  } catch (const EnvelopeError& ex) {
    s << "strategy bound C(x0): unavailable (" << ex.what() << ")\n";
  }
  for (const std::string& n : notes) s << "envelope note: " << n << "\n";
  dir.write("summary.txt", s.str());
  out << s.str();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personal-equilibrium solver for reference-dependent investors on finite scenario trees", "pereq"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON model configuration")->required();
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--damping", f.damping, "Picard damping in (0,1]");
    sub->add_option("--tol", f.tol, "fixed-point tolerance");
    sub->add_option("--max-iters", f.max_iters, "fixed-point iterations per start");
    sub->add_option("--starts", f.starts, "number of multistart strategies");
    sub->add_option("--backing", f.backing, "value backing")->check(CLI::IsMember({"exact", "grid"}));
    sub->add_option("--foc-tol", f.foc_tol, "first-order-condition tolerance");
    sub->add_option("--grid-points", f.grid_points, "wealth grid points for grid backing");
    sub->add_flag("--trace", f.trace, "write the per-iteration trace");
    sub->add_flag("-v,--verbose", f.verbose, "progress messages on stderr");
  };
  CLI::App* solve = app.add_subcommand("solve", "search for personal equilibria");
  CLI::App* br = app.add_subcommand("best-response", "best response to a reference strategy");
  CLI::App* certify = app.add_subcommand("certify", "certify a candidate equilibrium");
  CLI::App* verify = app.add_subcommand("verify", "run invariant checks");
  CLI::App* report = app.add_subcommand("report", "tree, certificate and envelope tables");
  for (CLI::App* sub : {solve, br, certify, verify, report}) common(sub);
  br->add_option("--reference", f.reference, "strategy CSV (node_id,depth,position)")->required();
  certify->add_option("--candidate", f.candidate, "strategy CSV (node_id,depth,position)")->required();
  verify->add_option("--suite", f.suite, "all|foc|bounds|hoelder|continuity")
      ->check(CLI::IsMember({"all", "foc", "bounds", "hoelder", "continuity"}));
  verify->add_option("--samples", f.samples, "samples per check");

  std::vector<const char*> argv{"pereq"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig cfg = configure(f);
    if (!check_preferences(cfg, err)) return kPreferences;
    const Problem problem = cfg.problem();
    if (solve->parsed()) return cmd_solve(cfg, problem, out, err);
    if (br->parsed()) return cmd_best_response(cfg, problem, f.reference, out);
    if (certify->parsed()) return cmd_certify(cfg, problem, f.candidate, out);
    if (verify->parsed()) return cmd_verify(cfg, problem, f.suite, out);
    return cmd_report(cfg, problem, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CertificationError& e) {
    err << "certification failed: " << e.what() << "\n";
    return kCertification;
  } catch (const PreferenceError& e) {
    err << "preferences rejected: " << e.what() << "\n";
    return kPreferences;
  } catch (const ModelError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
}

}  // namespace pereq::cli
