#include "pereq/equilibrium.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <thread>

namespace pereq {

void EquilibriumConfig::validate() const {
  if (!(damping > 0.0 && damping <= 1.0)) throw ModelError("damping must lie in (0,1]");
  if (!(tolerance > 0.0)) throw ModelError("tolerance must be positive");
  if (max_iterations < 1) throw ModelError("max_iterations must be at least 1");
  if (seeds.empty() && starts < 1) throw ModelError("at least one start is required");
  if (oracle_resolution < 2) throw ModelError("oracle resolution must be at least 2");
  if (!(start_radius > 0.0)) throw ModelError("start radius must be positive");
}

double evaluate_value(const Problem& problem, const Strategy& strategy,
                      const ReferenceDistribution& reference) {
  const ScenarioTree& tree = problem.tree();
  const WealthPath w = wealth(tree, problem.prices(), strategy, problem.x0);
  const int T = tree.horizon();
  double total = 0.0;
  for (NodeId id = tree.depth_begin(T); id < tree.depth_end(T); ++id)
    total += tree.node(id).probability *
             satisfaction(problem.preferences.utility, problem.preferences.gain_loss, w.wealth[id],
                          reference);
  return total;
}

double evaluate_self_value(const Problem& problem, const Strategy& strategy) {
  return evaluate_value(
      problem, strategy,
      reference_distribution(problem.tree(), problem.prices(), strategy, problem.x0));
}

double fixed_point_residual(const Problem& problem, const Strategy& strategy,
                            const SolverOptions& options) {
  return best_response(problem, strategy, options).strategy.distance(strategy);
}

EquilibriumReport iterate_fixed_point(const Problem& problem, const EquilibriumConfig& config,
                                      const Strategy& start, int start_id,
                                      const SolverOptions& options) {
  config.validate();
  require_complete(problem.tree(), start);
  const double lambda = config.damping;
  Strategy phi = start;
  EquilibriumReport rep;
  rep.start = start_id;
  rep.strategy = start;
  rep.residual = std::numeric_limits<double>::infinity();
  int k = 0;
  for (k = 1; k <= config.max_iterations; ++k) {
    const BestResponse br = best_response(problem, phi, options);
    const double r = br.strategy.distance(phi);
    rep.trace.push_back({start_id, k, r, evaluate_self_value(problem, phi)});
    if (r < rep.residual) {
      rep.residual = r;
      rep.strategy = phi;
    }
    if (r <= config.tolerance) {
      rep.converged = true;
      break;
    }
    std::vector<double> next(phi.size());
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] = (1.0 - lambda) * phi[i] + lambda * br.strategy[i];
    phi = Strategy(std::move(next));
  }
  rep.iterations = std::min(k, config.max_iterations);
  rep.value = evaluate_self_value(problem, rep.strategy);
  return rep;
}

CertificationReport certify_equilibrium(const Problem& problem, const Strategy& candidate,
                                        const EquilibriumConfig& config,
                                        const SolverOptions& options) {
  config.validate();
  const ScenarioTree& tree = problem.tree();
  require_complete(tree, candidate);
  CertificationReport rep;
  rep.analytic_residual = fixed_point_residual(problem, candidate, options);
  rep.analytic_passed = rep.analytic_residual <= config.tolerance;

  const ReferenceDistribution ref =
      reference_distribution(tree, problem.prices(), candidate, problem.x0);
  rep.candidate_value = evaluate_value(problem, candidate, ref);

  const std::size_t n = tree.nonterminal_count();
  const auto res = static_cast<std::size_t>(config.oracle_resolution);
  std::size_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (combos > config.oracle_cap / res) {
      combos = 0;
      break;
    }
    combos *= res;
  }
  if (combos == 0 || combos > config.oracle_cap) {
    rep.oracle_notice = "oracle skipped: " + std::to_string(res) + "^" + std::to_string(n) +
                        " position combinations exceed the cap of " +
                        std::to_string(config.oracle_cap);
    return rep;
  }
  rep.oracle_run = true;
  rep.combinations = combos;

  // Per-node position grids on +-K_t(x0).
  std::vector<std::vector<double>> grid(n);
  double widest = 0.0;
  for (NodeId o = 0; o < n; ++o) {
    const Bound Kb = problem.envelopes->stage(tree.node(o).depth).K(problem.x0);
    const double K = static_cast<double>(std::min<Bound>(Kb, std::numeric_limits<double>::max()));
    grid[o].resize(res);
    for (std::size_t k = 0; k < res; ++k)
      grid[o][k] = -K + 2.0 * K * static_cast<double>(k) / static_cast<double>(res - 1);
    widest = std::max(widest, 2.0 * K / static_cast<double>(res - 1));
  }
  rep.grid_step = widest;

  Bound Lmax = 0;
  try {
    for (int t = 0; t <= tree.horizon(); ++t)
      Lmax = std::max(Lmax, problem.envelopes->stage(t).L(problem.x0));
  } catch (const EnvelopeError&) {
    Lmax = std::numeric_limits<Bound>::infinity();
  }
  const Bound slack = 0.5L * Lmax * static_cast<Bound>(widest) * widest * tree.horizon();
  rep.slack = slack > static_cast<Bound>(std::numeric_limits<double>::max())
                  ? std::numeric_limits<double>::infinity()
                  : static_cast<double>(slack);

  // Leaf paths as (ancestor, increment) pairs.
  const int T = tree.horizon();
  std::vector<NodeId> leaves;
  std::vector<std::vector<std::pair<NodeId, double>>> paths;
  for (NodeId id = tree.depth_begin(T); id < tree.depth_end(T); ++id) {
    leaves.push_back(id);
    std::vector<std::pair<NodeId, double>> p;
    for (NodeId c = id; tree.node(c).depth > 0; c = tree.node(c).parent)
      p.emplace_back(tree.node(c).parent, problem.prices().increment(c));
    std::reverse(p.begin(), p.end());
    paths.push_back(std::move(p));
  }
  const Utility& U = problem.preferences.utility;
  const GainLoss& nu = problem.preferences.gain_loss;
  std::vector<std::pair<double, double>> ref_u;
  for (const auto& [w, q] : ref.atoms()) ref_u.emplace_back(U(w), q);

  std::vector<std::size_t> idx(n, 0);
  std::vector<double> pos(n);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> best_pos(n, 0.0);
  for (std::size_t c = 0; c < combos; ++c) {
    for (NodeId o = 0; o < n; ++o) pos[o] = grid[o][idx[o]];
    double v = 0.0;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      double w = problem.x0;
      for (const auto& [a, f] : paths[l]) w += pos[a] * f;
      const double u = U(w);
      double s = u;
      for (const auto& [uw, q] : ref_u) s += q * nu(u - uw);
      v += tree.node(leaves[l]).probability * s;
    }
    if (v > best) {
      best = v;
      best_pos = pos;
    }
    for (NodeId o = 0; o < n; ++o) {
      if (++idx[o] < res) break;
      idx[o] = 0;
    }
  }
  rep.oracle_best_value = best;
  rep.oracle_best = Strategy(best_pos);
  rep.improvement = best - rep.candidate_value;
  rep.oracle_passed = rep.improvement <= rep.slack;
  return rep;
}

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

std::vector<Strategy> multistart_strategies(const Problem& problem, const EquilibriumConfig& config) {
  if (!config.seeds.empty()) return config.seeds;
  const ScenarioTree& tree = problem.tree();
  std::vector<Strategy> out;
  out.push_back(Strategy::constant(tree, 0.0));
  std::mt19937_64 rng(config.seed);
  std::vector<double> radius(static_cast<std::size_t>(tree.horizon()));
  for (int t = 0; t < tree.horizon(); ++t)
    radius[static_cast<std::size_t>(t)] = static_cast<double>(
        std::min<Bound>(problem.envelopes->stage(t).K(problem.x0), config.start_radius));
  for (int s = 1; s < config.starts; ++s) {
    std::vector<double> pos(tree.nonterminal_count());
    for (NodeId o = 0; o < pos.size(); ++o) {
      const double r = radius[static_cast<std::size_t>(tree.node(o).depth)];
      pos[o] = -r + 2.0 * r * uniform01(rng);
    }
    out.emplace_back(std::move(pos));
  }
  return out;
}

EquilibriumSet find_equilibria(const Problem& problem, const EquilibriumConfig& config,
                               const SolverOptions& options) {
  config.validate();
  const std::vector<Strategy> starts = multistart_strategies(problem, config);
  EquilibriumSet set;
  set.reports.resize(starts.size());
  std::vector<std::exception_ptr> errors(starts.size());

  unsigned threads = config.threads == 0 ? std::thread::hardware_concurrency() : config.threads;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(starts.size())));
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t i; (i = cursor.fetch_add(1)) < starts.size();) {
      try {
        set.reports[i] = iterate_fixed_point(problem, config, starts[i], static_cast<int>(i), options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return collect_equilibria(std::move(set.reports), config.tolerance);
}

EquilibriumSet collect_equilibria(std::vector<EquilibriumReport> reports, double tolerance) {
  EquilibriumSet set;
  set.reports = std::move(reports);
  const double radius = 10.0 * tolerance;
  for (std::size_t i = 0; i < set.reports.size(); ++i) {
    const EquilibriumReport& r = set.reports[i];
    if (!r.converged) continue;
    bool merged = false;
    for (std::size_t& d : set.distinct) {
      if (set.reports[d].strategy.distance(r.strategy) <= radius) {
        if (r.residual < set.reports[d].residual) d = i;
        merged = true;
        break;
      }
    }
    if (!merged) set.distinct.push_back(i);
  }
  for (std::size_t d : set.distinct)
    if (!set.preferred || set.reports[d].value > set.reports[*set.preferred].value)
      set.preferred = d;
  return set;
}

}  // namespace pereq
