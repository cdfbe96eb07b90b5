#include "pereq/bestresponse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pereq {

Problem Problem::make(Market market, Preferences preferences, double x0,
                      std::optional<double> alpha, std::size_t subgrid) {
  if (!market.certificate.certified)
    throw CertificationError("market is not certified arbitrage-free");
  if (!std::isfinite(x0)) throw ModelError("initial capital is not finite");
  const double a = alpha.value_or(market.certificate.alpha_star);
  if (!(a > 0.0) || a > market.certificate.alpha_star)
    throw ModelError("envelope alpha must lie in (0, alpha*]");
  auto env = std::make_shared<const EnvelopeStack>(preferences, a, market.prices.bound(),
                                                   market.prices.exponent(),
                                                   market.tree.horizon(), subgrid);
  return Problem{std::move(market), std::move(preferences), x0, std::move(env)};
}

TerminalValue::TerminalValue(Preferences preferences, ReferenceDistribution reference, int horizon)
    : preferences_(std::move(preferences)), reference_(std::move(reference)), horizon_(horizon) {}

ValuePoint TerminalValue::evaluate(NodeId, double x) const {
  const auto s = satisfaction_derivatives(preferences_.utility, preferences_.gain_loss, x, reference_);
  return {s.value, s.d1, s.d2};
}

std::shared_ptr<const TerminalValue> terminal_value(const Preferences& preferences,
                                                    ReferenceDistribution reference, int horizon) {
  return std::make_shared<const TerminalValue>(preferences, std::move(reference), horizon);
}

OneStepTerms one_step_terms(const ValueFunction& next, const ScenarioTree& tree,
                            const PriceModel& prices, NodeId node, double x, double h) {
  const Node& n = tree.node(node);
  if (n.child_count == 0) throw SolverError("one-step terms requested at a terminal node");
  OneStepTerms t;
  for (std::size_t c = 0; c < n.child_count; ++c) {
    const NodeId child = n.first_child + c;
    const double p = tree.edge_probability(child);
    const double f = prices.increment(child);
    const ValuePoint v = next.evaluate(child, x + h * f);
    t.gamma_big += p * v.value;
    t.gamma += p * v.d1 * f;
    t.d_h += p * v.d2 * f * f;
    t.d_x += p * v.d2 * f;
    t.v1 += p * v.d1;
    t.v2 += p * v.d2;
  }
  return t;
}

double gamma_big(const ValueFunction& next, const ScenarioTree& tree, const PriceModel& prices,
                 NodeId node, double x, double h) {
  return one_step_terms(next, tree, prices, node, x, h).gamma_big;
}

double gamma_small(const ValueFunction& next, const ScenarioTree& tree, const PriceModel& prices,
                   NodeId node, double x, double h) {
  return one_step_terms(next, tree, prices, node, x, h).gamma;
}

namespace {

std::string where(NodeId node, double x) {
  std::ostringstream os;
  os.precision(17);
  os << "node " << node << ", x = " << x;
  return os.str();
}

}  // namespace

OneStepSolution solve_one_step(const ValueFunction& next, const ScenarioTree& tree,
                               const PriceModel& prices, NodeId node, double x,
                               const EnvelopeStage& envelopes, const SolverOptions& options) {
  if (tree.terminal(node)) throw SolverError("solve_one_step at a terminal node");
  const Bound Kb = envelopes.K(x);
  const double K = Kb > static_cast<Bound>(std::numeric_limits<double>::max())
                       ? std::numeric_limits<double>::infinity()
                       : static_cast<double>(Kb);
  if (!(K > 0.0)) throw SolverError("degenerate bracket K(x) <= 0 at " + where(node, x));
  const double tol = options.foc_tolerance;

  OneStepSolution sol;
  sol.bracket = K;
  auto eval = [&](double h) { return one_step_terms(next, tree, prices, node, x, h); };

  // Once within tolerance, a few more Newton steps are taken while they
  // keep shrinking |gamma|, so derivatives of v downstream see an
  // optimizer accurate to rounding rather than to the tolerance.
  auto polish = [&](double h, OneStepTerms t, int iterations) {
    for (int k = 0; k < 3 && t.gamma != 0.0 && t.d_h < 0.0; ++k) {
      const double cand = h - t.gamma / t.d_h;
      if (!std::isfinite(cand) || std::abs(cand) > K || cand == h) break;
      const OneStepTerms next_t = eval(cand);
      ++iterations;
      if (!(std::abs(next_t.gamma) < std::abs(t.gamma))) break;
      h = cand;
      t = next_t;
    }
    sol.position = h;
    sol.residual = std::abs(t.gamma);
    sol.terms = t;
    sol.iterations = iterations;
    return sol;
  };

  const OneStepTerms t0 = eval(0.0);
  if (!std::isfinite(t0.gamma)) throw SolverError("gamma is not finite at h = 0, " + where(node, x));
  if (std::abs(t0.gamma) <= tol) return polish(0.0, t0, 0);

  // Walk outward from 0 in the ascent direction, doubling, until gamma
  // changes sign or the bracket edge is reached.
  const double dir = t0.gamma > 0.0 ? 1.0 : -1.0;
  auto crossed = [&](double g) { return std::isnan(g) || g * dir <= 0.0; };
  double step = t0.d_h < 0.0 ? std::abs(t0.gamma / t0.d_h) : 1.0;
  if (!std::isfinite(step) || !(step > 0.0)) step = 1.0;
  step = std::min(step, K);

  double inner = 0.0;
  OneStepTerms t_inner = t0;
  double outer = 0.0;
  OneStepTerms t_outer;
  for (int expansions = 0;; ++expansions) {
    if (expansions > 2100) throw SolverError("bracket search did not terminate at " + where(node, x));
    outer = step;
    t_outer = eval(dir * outer);
    const double g = t_outer.gamma;
    if (std::isfinite(g) && std::abs(g) <= tol) return polish(dir * outer, t_outer, 0);
    if (crossed(g)) break;
    if (g * dir > t_inner.gamma * dir)
      throw SolverError("gamma is not decreasing in h at " + where(node, x));
    inner = outer;
    t_inner = t_outer;
    if (outer >= K) {
      sol.position = dir * K;
      sol.residual = std::abs(g);
      sol.terms = t_outer;
      sol.clamped = true;
      return sol;
    }
    step = std::min(K, 2.0 * outer);
  }

  // gamma > 0 at hp, < 0 (or non-finite) at hn, hp < hn.
  double hp = dir > 0.0 ? inner : -outer;
  double hn = dir > 0.0 ? outer : -inner;
  OneStepTerms cur = t_inner;
  double h = dir * inner;
  if (std::isfinite(t_outer.gamma) && std::abs(t_outer.gamma) < std::abs(t_inner.gamma)) {
    cur = t_outer;
    h = dir * outer;
  }
  double best_h = h;
  OneStepTerms best = cur;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (std::abs(cur.gamma) <= tol) break;
    if (cur.d_h > 0.0) throw SolverError("gamma is not decreasing in h at " + where(node, x));
    double cand = h - cur.gamma / cur.d_h;
    if (!std::isfinite(cand) || !(cand > hp && cand < hn)) cand = 0.5 * (hp + hn);
    const OneStepTerms t = eval(cand);
    if (std::isnan(t.gamma) || t.gamma < 0.0)
      hn = cand;
    else if (t.gamma > 0.0)
      hp = cand;
    h = cand;
    cur = t;
    if (std::isfinite(t.gamma) && std::abs(t.gamma) < std::abs(best.gamma)) {
      best = t;
      best_h = cand;
    }
    if (t.gamma == 0.0) break;
    if (hn - hp <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(h))) {
      ++it;
      break;
    }
  }
  if (std::abs(best.gamma) <= tol) return polish(best_h, best, it);
  sol.position = best_h;
  sol.residual = std::abs(best.gamma);
  sol.terms = best;
  sol.iterations = it;
  return sol;
}

RecursiveValue::RecursiveValue(std::shared_ptr<const ValueFunction> next, const Problem& problem,
                               int stage, SolverOptions options)
    : next_(std::move(next)), problem_(&problem), stage_(stage), options_(options) {}

const RecursiveValue::Entry& RecursiveValue::lookup(NodeId node, double x) const {
  if (problem_->tree().node(node).depth != stage_)
    throw SolverError("node " + std::to_string(node) + " is not at stage " + std::to_string(stage_));
  {
    std::lock_guard lock(mutex_);
    auto n = cache_.find(node);
    if (n != cache_.end()) {
      auto e = n->second.find(x);
      if (e != n->second.end()) return e->second;
    }
  }
  Entry entry;
  entry.solution = solve_one_step(*next_, problem_->tree(), problem_->prices(), node, x,
                                  problem_->envelopes->stage(stage_), options_);
  const OneStepTerms& t = entry.solution.terms;
  const double dxh = t.d_h != 0.0 ? -t.d_x / t.d_h : 0.0;
  entry.point = {t.gamma_big, t.v1, t.v2 + dxh * t.d_x};
  std::lock_guard lock(mutex_);
  // unordered_map references stay valid across rehashing.
  return cache_[node].emplace(x, entry).first->second;
}

ValuePoint RecursiveValue::evaluate(NodeId node, double x) const { return lookup(node, x).point; }

OneStepSolution RecursiveValue::solve(NodeId node, double x) const {
  return lookup(node, x).solution;
}

GridValue::GridValue(std::shared_ptr<const RecursiveValue> exact, const ScenarioTree& tree,
                     double lo, double hi, std::size_t points)
    : exact_(std::move(exact)),
      first_(tree.depth_begin(exact_->stage())),
      lo_(lo),
      hi_(hi),
      points_(points) {
  if (points_ < 2 || !(hi_ > lo_)) throw SolverError("grid backing needs lo < hi and >= 2 points");
  const std::size_t n = tree.depth_end(exact_->stage()) - first_;
  tables_.resize(n);
  once_ = std::make_unique<std::once_flag[]>(n);
}

const GridValue::Table& GridValue::table(NodeId node) const {
  const std::size_t idx = node - first_;
  if (idx >= tables_.size()) throw SolverError("grid lookup for a node at another stage");
  std::call_once(once_[idx], [&] {
    Table& t = tables_[idx];
    t.v.resize(points_);
    t.d1.resize(points_);
    t.d2.resize(points_);
    for (std::size_t k = 0; k < points_; ++k) {
      const double x = lo_ + (hi_ - lo_) * static_cast<double>(k) / static_cast<double>(points_ - 1);
      const ValuePoint p = exact_->evaluate(node, x);
      t.v[k] = p.value;
      t.d1[k] = p.d1;
      t.d2[k] = p.d2;
    }
  });
  return tables_[idx];
}

ValuePoint GridValue::evaluate(NodeId node, double x) const {
  if (!(x >= lo_ && x <= hi_)) return exact_->evaluate(node, x);
  const Table& t = table(node);
  const double step = (hi_ - lo_) / static_cast<double>(points_ - 1);
  std::size_t k = static_cast<std::size_t>((x - lo_) / step);
  if (k >= points_ - 1) k = points_ - 2;
  const double s = (x - (lo_ + step * static_cast<double>(k))) / step;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2,
               h11 = s3 - s2;

  double m0 = t.d1[k], m1 = t.d1[k + 1];
  const double secant = (t.v[k + 1] - t.v[k]) / step;
  if (secant > 0.0 && m0 > 0.0 && m1 > 0.0) {
    const double a = m0 / secant, b = m1 / secant;
    const double r = a * a + b * b;
    if (r > 9.0) {
      const double tau = 3.0 / std::sqrt(r);
      m0 = tau * a * secant;
      m1 = tau * b * secant;
    }
  }
  ValuePoint p;
  p.value = h00 * t.v[k] + h10 * step * m0 + h01 * t.v[k + 1] + h11 * step * m1;
  p.d1 = h00 * t.d1[k] + h10 * step * t.d2[k] + h01 * t.d1[k + 1] + h11 * step * t.d2[k + 1];
  p.d2 = (1.0 - s) * t.d2[k] + s * t.d2[k + 1];
  return p;
}

ValueRecursion::ValueRecursion(const Problem& problem, std::shared_ptr<const TerminalValue> terminal,
                               const SolverOptions& options)
    : terminal_(std::move(terminal)) {
  const int T = problem.tree().horizon();
  stages_.resize(static_cast<std::size_t>(T) + 1);
  solvers_.resize(static_cast<std::size_t>(T));
  stages_.back() = terminal_;
  const double half = T * problem.prices().bound() * options.grid_position_scale;
  for (int t = T - 1; t >= 0; --t) {
    const auto idx = static_cast<std::size_t>(t);
    auto rec = std::make_shared<const RecursiveValue>(stages_[idx + 1], problem, t, options);
    solvers_[idx] = rec;
    if (options.backing == Backing::grid && t > 0)
      stages_[idx] = std::make_shared<const GridValue>(rec, problem.tree(), problem.x0 - half,
                                                       problem.x0 + half, options.grid_points);
    else
      stages_[idx] = rec;
  }
}

std::unique_ptr<ValueRecursion> value_recursion(const Problem& problem,
                                                const ReferenceDistribution& reference,
                                                const SolverOptions& options) {
  return std::make_unique<ValueRecursion>(
      problem, terminal_value(problem.preferences, reference, problem.tree().horizon()), options);
}

ReferenceDistribution reference_distribution(const ScenarioTree& tree, const PriceModel& prices,
                                             const Strategy& strategy, double x0) {
  const WealthPath w = wealth(tree, prices, strategy, x0);
  std::vector<std::pair<double, double>> atoms;
  const int T = tree.horizon();
  for (NodeId id = tree.depth_begin(T); id < tree.depth_end(T); ++id)
    atoms.emplace_back(w.wealth[id], tree.node(id).probability);
  return ReferenceDistribution(std::move(atoms));
}

BestResponse best_response_to(const Problem& problem, const ReferenceDistribution& reference,
                              const SolverOptions& options) {
  const ScenarioTree& tree = problem.tree();
  auto rec = value_recursion(problem, reference, options);
  BestResponse br;
  br.reference = reference;
  br.wealth.assign(tree.size(), problem.x0);
  br.solutions.resize(tree.nonterminal_count());
  std::vector<double> pos(tree.nonterminal_count(), 0.0);
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    const Node& n = tree.node(o);
    const OneStepSolution s = rec->solver(n.depth).solve(o, br.wealth[o]);
    br.solutions[o] = s;
    pos[o] = s.position;
    for (std::size_t c = 0; c < n.child_count; ++c) {
      const NodeId child = n.first_child + c;
      br.wealth[child] = br.wealth[o] + s.position * problem.prices().increment(child);
    }
  }
  br.strategy = Strategy(std::move(pos));
  br.value = rec->solver(0).evaluate(0, problem.x0).value;
  return br;
}

BestResponse best_response(const Problem& problem, const Strategy& reference_strategy,
                           const SolverOptions& options) {
  return best_response_to(
      problem,
      reference_distribution(problem.tree(), problem.prices(), reference_strategy, problem.x0),
      options);
}

}  // namespace pereq
