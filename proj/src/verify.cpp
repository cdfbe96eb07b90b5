#include "pereq/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>

#include "pereq/hoelder.hpp"

namespace pereq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFirstDifference = 1e-4;
constexpr double kSecondDifference = 1e-3;
constexpr double kValueArithmetic = 1e-12;
constexpr double kContinuityPerturbation = 1e-6;
constexpr double kContinuityThreshold = 1e-3;

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

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

double to_double(Bound v) {
  if (std::isnan(v)) return std::numeric_limits<double>::quiet_NaN();
  if (v > static_cast<Bound>(std::numeric_limits<double>::max())) return kInf;
  if (v < -static_cast<Bound>(std::numeric_limits<double>::max())) return -kInf;
  return static_cast<double>(v);
}

/// (upper - lower) relative to the larger magnitude; +1 when only the
/// upper side is infinite.
double slack(Bound lower, Bound upper) {
  if (std::isnan(lower) || std::isnan(upper)) return -kInf;
  if (std::isinf(upper) && upper > 0 && std::isfinite(lower)) return 1.0;
  if (std::isinf(lower) && lower < 0 && std::isfinite(upper)) return 1.0;
  const Bound scale = std::max(std::abs(lower), std::abs(upper));
  if (!std::isfinite(scale)) return -kInf;
  if (scale == 0) return 0.0;
  return to_double((upper - lower) / scale);
}

class Tracker {
 public:
  Tracker(std::string name, double tolerance) {
    report_.name = std::move(name);
    report_.tolerance = tolerance;
    report_.worst_margin = kInf;
    report_.witness = "no instances";
  }

  void add(double margin, const std::function<std::string()>& witness) {
    if (std::isnan(margin)) margin = -kInf;
    if (report_.instances++ == 0 || margin < report_.worst_margin) {
      report_.worst_margin = margin;
      report_.witness = witness();
    }
  }

  void fail(const std::string& witness) { add(-kInf, [&] { return witness; }); }

  /// Used when nothing could be tested.
  void skip(const std::string& reason) {
    if (report_.instances == 0) report_.witness = reason;
  }

  CheckReport finish() && { return std::move(report_); }

 private:
  CheckReport report_;
};

struct Sample {
  std::size_t ref = 0;
  NodeId node = 0;
  double x = 0.0;
};

struct PairSample {
  std::size_t ref = 0;
  NodeId a = 0, b = 0;
  double x = 0.0;
};

class Context {
 public:
  Context(const Problem& problem, const VerifyOptions& options)
      : problem_(problem), opt_(options), rng_(options.seed) {
    const ScenarioTree& tree = problem.tree();
    const int T = tree.horizon();
    const double r = options.position_scale;
    width_ = T * problem.prices().bound() * r;

    ref_strategies_.push_back(Strategy::constant(tree, 0.0));
    for (int k = 1; k < std::max(1, options.references); ++k) {
      std::vector<double> level(static_cast<std::size_t>(T)), tilt(level.size());
      for (int t = 0; t < T; ++t) {
        level[static_cast<std::size_t>(t)] = uniform(rng_, -0.5 * r, 0.5 * r);
        tilt[static_cast<std::size_t>(t)] = uniform(rng_, -0.5 * r, 0.5 * r);
      }
      std::vector<double> pos(tree.nonterminal_count());
      for (NodeId o = 0; o < pos.size(); ++o) {
        const auto t = static_cast<std::size_t>(tree.node(o).depth);
        double s = 0.0;
        for (double e : tree.history(o)) s += e;
        pos[o] = level[t] + tilt[t] * std::tanh(s);
      }
      ref_strategies_.emplace_back(std::move(pos));
    }
    for (const Strategy& s : ref_strategies_)
      refs_.push_back(reference_distribution(tree, problem.prices(), s, problem.x0));

    // Deep stages cost a full sub-grid scan per wealth point, so the pool
    // of wealths shrinks with the number of stages left.
    pools_.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const int left = T - t;
      const int extra = left == 1 ? 15 : left == 2 ? 7 : 0;
      auto& pool = pools_[static_cast<std::size_t>(t)];
      pool.push_back(problem.x0);
      for (int k = 0; k < extra; ++k)
        pool.push_back(uniform(rng_, problem.x0 - width_, problem.x0 + width_));
    }

    for (std::size_t n = 0; n < options.samples; ++n) {
      const int t = static_cast<int>(pick(rng_, static_cast<std::size_t>(T)));
      samples_.push_back(draw(t));
    }
    if (T >= 2) {
      for (std::size_t n = 0; n < options.samples; ++n) {
        const int t = 1 + static_cast<int>(pick(rng_, static_cast<std::size_t>(T - 1)));
        const Sample s = draw(t);
        const std::size_t count = tree.depth_end(t) - tree.depth_begin(t);
        if (count < 2) continue;
        NodeId b = tree.depth_begin(t) + pick(rng_, count - 1);
        if (b >= s.node) ++b;
        pairs_.push_back({s.ref, s.node, b, s.x});
      }
    }
    h_draws_.resize(samples_.size());
    for (double& u : h_draws_) u = uniform(rng_, -1.0, 1.0);
  }

  const Problem& problem() const { return problem_; }
  const ScenarioTree& tree() const { return problem_.tree(); }
  const VerifyOptions& options() const { return opt_; }
  const EnvelopeStage& env(int t) const { return problem_.envelopes->stage(t); }
  std::mt19937_64& rng() { return rng_; }
  /// Gives each check its own stream so a check's result does not depend
  /// on which other checks ran before it.
  void reseed(std::uint64_t salt) {
    std::seed_seq seq{opt_.seed, salt};
    rng_.seed(seq);
  }
  double width() const { return width_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<PairSample>& pairs() const { return pairs_; }
  double h_draw(std::size_t n) const { return h_draws_[n]; }
  const std::vector<Strategy>& ref_strategies() const { return ref_strategies_; }
  const std::vector<ReferenceDistribution>& refs() const { return refs_; }
  const std::vector<std::vector<double>>& pools() const { return pools_; }

  const ValueRecursion& recursion(std::size_t ref) {
    auto& slot = recursions_[ref];
    if (!slot) slot = value_recursion(problem_, refs_[ref], opt_.solver);
    return *slot;
  }

  const RecursiveValue& solver(std::size_t ref, NodeId node) {
    return recursion(ref).solver(tree().node(node).depth);
  }

  const EquilibriumSet& equilibria() {
    if (!equilibria_) equilibria_ = find_equilibria(problem_, opt_.equilibrium, opt_.solver);
    return *equilibria_;
  }

  std::string where(const Sample& s) const {
    return "node " + tree().path_label(s.node) + " x=" + num(s.x) + " ref=" + std::to_string(s.ref);
  }

 private:
  Sample draw(int t) {
    const ScenarioTree& tree = problem_.tree();
    Sample s;
    s.ref = pick(rng_, refs_.size());
    s.node = tree.depth_begin(t) + pick(rng_, tree.depth_end(t) - tree.depth_begin(t));
    const auto& pool = pools_[static_cast<std::size_t>(t)];
    s.x = pool[pick(rng_, pool.size())];
    return s;
  }

  const Problem& problem_;
  const VerifyOptions& opt_;
  std::mt19937_64 rng_;
  double width_ = 0.0;
  std::vector<Strategy> ref_strategies_;
  std::vector<ReferenceDistribution> refs_;
  std::vector<std::vector<double>> pools_;
  std::vector<Sample> samples_;
  std::vector<PairSample> pairs_;
  std::vector<double> h_draws_;
  std::map<std::size_t, std::unique_ptr<ValueRecursion>> recursions_;
  std::optional<EquilibriumSet> equilibria_;
};

/// Runs body(sample) for every sample, turning exceptions into failures.
template <class Body>
void over_samples(Context& ctx, Tracker& tr, Body body) {
  for (std::size_t n = 0; n < ctx.samples().size(); ++n) {
    const Sample& s = ctx.samples()[n];
    try {
      body(s, n);
    } catch (const std::exception& e) {
      tr.fail(ctx.where(s) + ": " + e.what());
    }
  }
}

// ---- preferences -------------------------------------------------------

std::vector<ReferenceDistribution> probe_references(Context& ctx) {
  std::vector<ReferenceDistribution> out = ctx.refs();
  const double x0 = ctx.problem().x0;
  for (int k = 0; k < 2; ++k) {
    std::vector<std::pair<double, double>> atoms;
    double total = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double q = uniform(ctx.rng(), 0.1, 1.0);
      atoms.emplace_back(uniform(ctx.rng(), x0 - ctx.width(), x0 + ctx.width()), q);
      total += q;
    }
    for (auto& [w, q] : atoms) q /= total;
    out.emplace_back(std::move(atoms), 1e-12);
  }
  return out;
}

CheckReport linear_branch(Context& ctx) {
  Tracker tr("linear_branch", 0.0);
  const GainLoss& nu = ctx.problem().preferences.gain_loss;
  for (double x : ctx.options().probe.nodes()) {
    if (x > 0.0) continue;
    const double expect = nu.loss_slope() * x;
    tr.add(0.0 - std::abs(nu(x) - expect), [&] { return "x=" + num(x) + " nu=" + num(nu(x)); });
  }
  return std::move(tr).finish();
}

CheckReport satisfaction_sandwich(Context& ctx) {
  Tracker tr("satisfaction_sandwich", 0.0);
  const Preferences& p = ctx.problem().preferences;
  const Bound top = static_cast<Bound>(p.utility.upper_bound()) + p.gain_loss.bound();
  const EnvelopeStage& terminal = ctx.env(ctx.tree().horizon());
  const auto refs = probe_references(ctx);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    for (double x : ctx.options().probe.nodes()) {
      const double s = satisfaction(p.utility, p.gain_loss, x, refs[r]);
      const Bound lo = terminal.i(x);
      tr.add(std::min(slack(lo, s), slack(s, top)), [&] {
        return "x=" + num(x) + " reference=" + std::to_string(r) + " S=" + num(s) + " i=" + num(lo);
      });
    }
  }
  return std::move(tr).finish();
}

CheckReport derivative_sandwich(Context& ctx) {
  Tracker tr("derivative_sandwich", kFirstDifference);
  const Preferences& p = ctx.problem().preferences;
  const double d = ctx.options().probe.fd_step;
  const double k = p.gain_loss.loss_slope();
  const auto refs = probe_references(ctx);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    for (double x : ctx.options().probe.nodes()) {
      const double fd = (satisfaction(p.utility, p.gain_loss, x + d, refs[r]) -
                         satisfaction(p.utility, p.gain_loss, x - d, refs[r])) /
                        (2.0 * d);
      const double u1 = p.utility.derivative(x);
      const double m = std::min(fd - u1, (1.0 + k) * u1 - fd) / ((1.0 + k) * u1);
      tr.add(m, [&] {
        return "x=" + num(x) + " reference=" + std::to_string(r) + " dS=" + num(fd) + " U'=" + num(u1);
      });
    }
  }
  return std::move(tr).finish();
}

CheckReport satisfaction_concavity(Context& ctx) {
  Tracker tr("satisfaction_concavity", 0.0);
  const Preferences& p = ctx.problem().preferences;
  const auto xs = ctx.options().probe.nodes();
  const auto refs = probe_references(ctx);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    std::vector<double> s(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n)
      s[n] = satisfaction(p.utility, p.gain_loss, xs[n], refs[r]);
    for (std::size_t n = 1; n + 1 < xs.size(); ++n) {
      const double second = s[n + 1] - 2.0 * s[n] + s[n - 1];
      tr.add(-second, [&] { return "x=" + num(xs[n]) + " reference=" + std::to_string(r); });
    }
  }
  return std::move(tr).finish();
}

CheckReport envelope_positivity(Context& ctx) {
  Tracker tr("envelope_positivity", 0.0);
  const int T = ctx.tree().horizon();
  for (int t = 0; t < T; ++t) {
    const EnvelopeStage& e = ctx.env(t);
    for (double x : ctx.pools()[static_cast<std::size_t>(t)]) {
      const std::string at = "stage " + std::to_string(t) + " x=" + num(x);
      try {
        const std::pair<const char*, Bound> values[] = {
            {"K", e.K(x)},   {"j_v", e.j(x)}, {"J_v", e.J(x)},   {"l_v", e.ell(x)},
            {"L_v", e.L(x)}, {"C_h", e.C_h(x)}, {"C_v", e.C_V(x)}};
        for (const auto& [name, v] : values) {
          const double m = std::isfinite(v) ? (v > 0 ? 1.0 : to_double(v)) : -kInf;
          tr.add(m, [&] { return at + " " + name + "=" + num(v); });
        }
      } catch (const std::exception& ex) {
        tr.fail(at + ": " + ex.what());
      }
    }
  }
  return std::move(tr).finish();
}

CheckReport asymptotic_elasticity(Context& ctx) {
  Tracker tr("asymptotic_elasticity", 0.0);
  const Preferences& p = ctx.problem().preferences;
  const ProbeGrid& g = ctx.options().probe;
  const ValidationReport v = validate_preferences(p.utility, p.gain_loss, g);
  if (v.elasticity_threshold)
    tr.add((g.hi - *v.elasticity_threshold) / (g.hi - g.lo),
           [&] { return "holds from x=" + num(*v.elasticity_threshold); });
  else
    tr.fail("elasticity probe never settles on [" + num(g.lo) + ", " + num(g.hi) + "]");
  return std::move(tr).finish();
}

// ---- market ------------------------------------------------------------

CheckReport no_arbitrage(Context& ctx) {
  Tracker tr("no_arbitrage", kProbabilityTolerance);
  const ScenarioTree& tree = ctx.tree();
  const PriceModel& prices = ctx.problem().prices();
  const double a = ctx.problem().market.certificate.alpha_star;
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    const Node& n = tree.node(o);
    double up = 0.0, down = 0.0;
    for (std::size_t c = 0; c < n.child_count; ++c) {
      const NodeId child = n.first_child + c;
      const double f = prices.increment(child);
      if (f >= a) up += tree.edge_probability(child);
      if (f <= -a) down += tree.edge_probability(child);
    }
    tr.add(std::min(up, down) - a, [&] {
      return "node " + tree.path_label(o) + " P[f>=a]=" + num(up) + " P[f<=-a]=" + num(down) +
             " a=" + num(a);
    });
  }
  return std::move(tr).finish();
}

CheckReport price_hoelder(Context& ctx) {
  Tracker tr("price_hoelder", 0.0);
  const ScenarioTree& tree = ctx.tree();
  const PriceModel& prices = ctx.problem().prices();
  const double C = prices.bound(), chi = prices.exponent();
  for (int t = 1; t <= tree.horizon(); ++t) {
    for (NodeId a = tree.depth_begin(t); a < tree.depth_end(t); ++a) {
      const double fa = prices.increment(a);
      tr.add((C - std::abs(fa)) / C,
             [&] { return "node " + tree.path_label(a) + " |f|=" + num(std::abs(fa)) + " C_f=" + num(C); });
      for (NodeId b = a + 1; b < tree.depth_end(t); ++b) {
        const double d = tree.distance(a, b);
        const double diff = std::abs(fa - prices.increment(b));
        const double bound = C * std::pow(d, chi);
        const double m = bound > 0.0 ? (bound - diff) / bound : -diff;
        tr.add(m, [&] {
          return "nodes " + tree.path_label(a) + " and " + tree.path_label(b) + " |df|=" + num(diff) +
                 " C_f d^chi=" + num(bound);
        });
      }
    }
  }
  return std::move(tr).finish();
}

CheckReport hoelder_extension(Context& ctx) {
  Tracker tr("hoelder_extension", kValueArithmetic);
  const ScenarioTree& tree = ctx.tree();
  const PriceModel& prices = ctx.problem().prices();
  const double C = prices.bound(), chi = prices.exponent();
  for (int t = 1; t <= tree.horizon(); ++t) {
    std::vector<Point> points;
    std::vector<double> values;
    double R = 0.0;
    for (NodeId o = tree.depth_begin(t); o < tree.depth_end(t); ++o) {
      points.push_back(tree.history(o));
      values.push_back(prices.increment(o));
      R = std::max(R, euclidean_norm(points.back()));
    }
    if (R == 0.0) R = 1.0;
    const HoelderExtension g = hoelder_extend(points, values, C, chi, R);
    for (std::size_t k = 0; k < points.size(); ++k) {
      const double err = std::abs(g(points[k]) - values[k]);
      tr.add(-err, [&] { return "depth " + std::to_string(t) + " sample point " + std::to_string(k); });
    }
    const std::size_t dim = points.front().size();
    auto draw = [&] {
      Point e(dim);
      for (double& c : e) c = uniform(ctx.rng(), -2.0 * R, 2.0 * R);
      return e;
    };
    const double bound = g.uniform_bound();
    for (std::size_t n = 0; n < ctx.options().samples; ++n) {
      const Point e = draw(), f = draw();
      const double ge = g(e), gf = g(f);
      const double lip = C * std::pow(euclidean_distance(e, f), chi);
      const double diff = std::abs(ge - gf);
      const double m1 = lip > 0.0 ? (lip - diff) / lip : -diff;
      const double m2 = (bound - std::max(std::abs(ge), std::abs(gf))) / bound;
      tr.add(std::min(m1, m2), [&] {
        return "depth " + std::to_string(t) + " pair " + std::to_string(n) + " |dg|=" + num(diff) +
               " C|de|^chi=" + num(lip);
      });
    }
  }
  return std::move(tr).finish();
}

// ---- best response -----------------------------------------------------

CheckReport foc_residual(Context& ctx) {
  Tracker tr("foc_residual", 0.0);
  const double tol = ctx.options().solver.foc_tolerance;
  auto add = [&](const OneStepSolution& sol, const std::string& at) {
    const double m = sol.clamped ? -kInf : tol - sol.residual;
    tr.add(m, [&] {
      return at + " h=" + num(sol.position) + " |gamma|=" + num(sol.residual) +
             (sol.clamped ? " clamped" : "");
    });
  };
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    add(ctx.solver(s.ref, s.node).solve(s.node, s.x), ctx.where(s));
  });
  for (std::size_t r = 0; r < ctx.refs().size(); ++r) {
    try {
      const BestResponse br = best_response_to(ctx.problem(), ctx.refs()[r], ctx.options().solver);
      for (NodeId o = 0; o < br.solutions.size(); ++o)
        add(br.solutions[o], "best response to ref " + std::to_string(r) + " node " +
                                 ctx.tree().path_label(o));
    } catch (const std::exception& e) {
      tr.fail("best response to ref " + std::to_string(r) + ": " + e.what());
    }
  }
  return std::move(tr).finish();
}

CheckReport optimizer_bound(Context& ctx) {
  Tracker tr("optimizer_bound", 0.0);
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const EnvelopeStage& e = ctx.env(ctx.tree().node(s.node).depth);
    const double h = ctx.solver(s.ref, s.node).solve(s.node, s.x).position;
    const Bound K = e.K(s.x), Ch = e.C_h(s.x);
    const Bound ah = std::abs(static_cast<Bound>(h));
    tr.add(std::min(slack(ah, K), slack(ah, Ch)), [&] {
      return ctx.where(s) + " |h|=" + num(std::abs(h)) + " K=" + num(K) + " C_h=" + num(Ch);
    });
  });
  return std::move(tr).finish();
}

CheckReport curvature_floor(Context& ctx) {
  Tracker tr("curvature_floor", 0.0);
  const double C_f = ctx.problem().prices().bound();
  over_samples(ctx, tr, [&](const Sample& s, std::size_t n) {
    const int t = ctx.tree().node(s.node).depth;
    const EnvelopeStage& e = ctx.env(t);
    const double span = to_double(std::min<Bound>(e.K(s.x), 10.0 * ctx.options().position_scale));
    const double h = span * ctx.h_draw(n);
    const OneStepTerms terms = one_step_terms(ctx.recursion(s.ref).stage(t + 1), ctx.tree(),
                                              ctx.problem().prices(), s.node, s.x, h);
    // alpha^3 inf l_V over D(x) equals C_f^2 l_v(x).
    const Bound floor = static_cast<Bound>(C_f) * C_f * e.ell(s.x);
    tr.add(slack(floor, -terms.d_h), [&] {
      return ctx.where(s) + " h=" + num(h) + " -d_h gamma=" + num(-terms.d_h) + " floor=" + num(floor);
    });
  });
  return std::move(tr).finish();
}

CheckReport derivative_envelopes(Context& ctx) {
  Tracker tr("derivative_envelopes", 0.0);
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const EnvelopeStage& e = ctx.env(ctx.tree().node(s.node).depth);
    const ValuePoint v = ctx.solver(s.ref, s.node).evaluate(s.node, s.x);
    const Bound j = e.j(s.x), J = e.J(s.x), l = e.ell(s.x), L = e.L(s.x);
    const double m = std::min({slack(j, v.d1), slack(v.d1, J), slack(l, -v.d2), slack(-v.d2, L)});
    tr.add(m, [&] {
      return ctx.where(s) + " v'=" + num(v.d1) + " in [" + num(j) + ", " + num(J) + "] -v''=" +
             num(-v.d2) + " in [" + num(l) + ", " + num(L) + "]";
    });
  });
  return std::move(tr).finish();
}

double relative_error(double approx, double exact) {
  const double scale = std::abs(exact);
  return scale > 0.0 ? std::abs(approx - exact) / scale : std::abs(approx);
}

CheckReport envelope_derivative(Context& ctx) {
  Tracker tr("envelope_derivative", kFirstDifference);
  const double d = ctx.options().probe.fd_step;
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const RecursiveValue& v = ctx.solver(s.ref, s.node);
    const double fd = (v.evaluate(s.node, s.x + d).value - v.evaluate(s.node, s.x - d).value) / (2.0 * d);
    const double exact = v.evaluate(s.node, s.x).d1;
    tr.add(-relative_error(fd, exact),
           [&] { return ctx.where(s) + " v'=" + num(exact) + " fd=" + num(fd); });
  });
  return std::move(tr).finish();
}

CheckReport envelope_curvature(Context& ctx) {
  Tracker tr("envelope_curvature", kSecondDifference);
  const double d = ctx.options().probe.fd_step;
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const RecursiveValue& v = ctx.solver(s.ref, s.node);
    const double fd = (v.evaluate(s.node, s.x + d).d1 - v.evaluate(s.node, s.x - d).d1) / (2.0 * d);
    const double exact = v.evaluate(s.node, s.x).d2;
    tr.add(-relative_error(fd, exact),
           [&] { return ctx.where(s) + " v''=" + num(exact) + " fd=" + num(fd); });
  });
  return std::move(tr).finish();
}

CheckReport value_bounds(Context& ctx) {
  Tracker tr("value_bounds", 0.0);
  const Preferences& p = ctx.problem().preferences;
  const Bound top = static_cast<Bound>(p.utility.upper_bound()) + p.gain_loss.bound();
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const Bound lo = ctx.env(ctx.tree().node(s.node).depth).i(s.x);
    const double v = ctx.solver(s.ref, s.node).evaluate(s.node, s.x).value;
    tr.add(std::min(slack(lo, v), slack(v, top)),
           [&] { return ctx.where(s) + " v=" + num(v) + " i_v=" + num(lo); });
  });
  return std::move(tr).finish();
}

CheckReport value_shape(Context& ctx) {
  Tracker tr("value_shape", 0.0);
  over_samples(ctx, tr, [&](const Sample& s, std::size_t) {
    const RecursiveValue& v = ctx.solver(s.ref, s.node);
    const double d = 0.1 * std::max(1.0, std::abs(s.x));
    const double lo = v.evaluate(s.node, s.x - d).value;
    const double mid = v.evaluate(s.node, s.x).value;
    const double hi = v.evaluate(s.node, s.x + d).value;
    tr.add(std::min(hi - mid, -(hi - 2.0 * mid + lo)), [&] {
      return ctx.where(s) + " v(x-d), v(x), v(x+d) = " + num(lo) + ", " + num(mid) + ", " + num(hi);
    });
  });
  return std::move(tr).finish();
}

CheckReport dominance(Context& ctx) {
  Tracker tr("dominance", kValueArithmetic);
  const Problem& problem = ctx.problem();
  const ScenarioTree& tree = ctx.tree();
  const std::size_t n = tree.nonterminal_count();
  std::size_t res = static_cast<std::size_t>(std::max(3, ctx.options().dominance_resolution));
  auto combos = [&](std::size_t r) {
    double c = 1.0;
    for (std::size_t i = 0; i < n; ++i) c *= static_cast<double>(r);
    return c;
  };
  while (res > 3 && combos(res) > static_cast<double>(ctx.options().dominance_cap)) --res;
  if (combos(res) > static_cast<double>(ctx.options().dominance_cap)) {
    tr.skip("skipped: " + std::to_string(n) + " decision nodes is too many to enumerate");
    return std::move(tr).finish();
  }
  try {
    std::vector<std::vector<double>> grid(n);
    for (NodeId o = 0; o < n; ++o) {
      const double span = to_double(std::min<Bound>(ctx.env(tree.node(o).depth).K(problem.x0),
                                                    10.0 * ctx.options().position_scale));
      for (std::size_t k = 0; k < res; ++k)
        grid[o].push_back(-span + 2.0 * span * static_cast<double>(k) / static_cast<double>(res - 1));
    }
    const auto total = static_cast<std::size_t>(combos(res));
    for (std::size_t r = 0; r < ctx.refs().size(); ++r) {
      const double v0 = ctx.recursion(r).solver(0).evaluate(0, problem.x0).value;
      std::vector<std::size_t> idx(n, 0);
      std::vector<double> pos(n);
      double best = -kInf;
      std::vector<double> best_pos;
      for (std::size_t c = 0; c < total; ++c) {
        for (NodeId o = 0; o < n; ++o) pos[o] = grid[o][idx[o]];
        const double v = evaluate_value(problem, Strategy(pos), ctx.refs()[r]);
        if (v > best) {
          best = v;
          best_pos = pos;
        }
        for (NodeId o = 0; o < n; ++o) {
          if (++idx[o] < res) break;
          idx[o] = 0;
        }
      }
      tr.add(v0 - best, [&] {
        std::string w = "ref " + std::to_string(r) + " V_0=" + num(v0) + " grid best=" + num(best) + " at";
        for (double h : best_pos) w += " " + num(h);
        return w;
      });
    }
  } catch (const std::exception& e) {
    tr.fail(e.what());
  }
  return std::move(tr).finish();
}

// ---- Hoelder in the past -----------------------------------------------

template <class Quantity>
CheckReport hoelder_pairs(Context& ctx, const char* name, Quantity quantity,
                          Bound (EnvelopeStage::*constant)(double) const) {
  Tracker tr(name, 0.0);
  const ScenarioTree& tree = ctx.tree();
  if (ctx.pairs().empty()) tr.skip("no depth with two or more decision nodes");
  for (const PairSample& p : ctx.pairs()) {
    const int t = tree.node(p.a).depth;
    const std::string at = "nodes " + tree.path_label(p.a) + " and " + tree.path_label(p.b) +
                           " x=" + num(p.x) + " ref=" + std::to_string(p.ref);
    try {
      const EnvelopeStage& e = ctx.env(t);
      const double qa = quantity(p.ref, p.a, p.x), qb = quantity(p.ref, p.b, p.x);
      const double diff = std::abs(qa - qb);
      const Bound bound = (e.*constant)(p.x) * std::pow(static_cast<Bound>(tree.distance(p.a, p.b)),
                                                         static_cast<Bound>(e.theta()));
      const double m = bound > 0 ? slack(diff, bound) : -diff;
      tr.add(m, [&] { return at + " diff=" + num(diff) + " bound=" + num(bound); });
    } catch (const std::exception& ex) {
      tr.fail(at + ": " + ex.what());
    }
  }
  return std::move(tr).finish();
}

CheckReport hoelder_optimizer(Context& ctx) {
  return hoelder_pairs(
      ctx, "hoelder_optimizer",
      [&](std::size_t r, NodeId o, double x) { return ctx.solver(r, o).solve(o, x).position; },
      &EnvelopeStage::C_h);
}

CheckReport hoelder_value(Context& ctx) {
  return hoelder_pairs(
      ctx, "hoelder_value",
      [&](std::size_t r, NodeId o, double x) { return ctx.solver(r, o).evaluate(o, x).value; },
      &EnvelopeStage::C_V);
}

// ---- continuity and equilibrium ----------------------------------------

CheckReport best_response_continuity(Context& ctx) {
  Tracker tr("best_response_continuity", 0.0);
  for (std::size_t r = 0; r < ctx.ref_strategies().size(); ++r) {
    try {
      const Strategy& base = ctx.ref_strategies()[r];
      std::vector<double> moved = base.positions();
      for (double& h : moved) h += uniform(ctx.rng(), -kContinuityPerturbation, kContinuityPerturbation);
      const Strategy a = best_response(ctx.problem(), base, ctx.options().solver).strategy;
      const Strategy b = best_response(ctx.problem(), Strategy(moved), ctx.options().solver).strategy;
      const double d = a.distance(b);
      tr.add(kContinuityThreshold - d, [&] {
        return "ref " + std::to_string(r) + " |dpsi|=" + num(d) + " for |dphi|<=" + num(kContinuityPerturbation);
      });
    } catch (const std::exception& e) {
      tr.fail("ref " + std::to_string(r) + ": " + e.what());
    }
  }
  return std::move(tr).finish();
}

template <class Body>
CheckReport over_equilibria(Context& ctx, const char* name, double tolerance, Body body) {
  Tracker tr(name, tolerance);
  try {
    const EquilibriumSet& set = ctx.equilibria();
    body(set, tr);
    tr.skip("no start converged");
  } catch (const std::exception& e) {
    tr.fail(e.what());
  }
  return std::move(tr).finish();
}

CheckReport fixed_point_idempotence(Context& ctx) {
  const double tol = ctx.options().equilibrium.tolerance;
  return over_equilibria(ctx, "fixed_point_idempotence", 0.0, [&](const EquilibriumSet& set, Tracker& tr) {
    for (std::size_t d : set.distinct) {
      const double r = fixed_point_residual(ctx.problem(), set.reports[d].strategy, ctx.options().solver);
      tr.add(tol - r, [&] { return "start " + std::to_string(d) + " residual=" + num(r); });
    }
  });
}

bool tiny(const ScenarioTree& tree) {
  if (tree.horizon() > 2) return false;
  for (const auto& dist : tree.distributions())
    if (dist.size() > 2) return false;
  return true;
}

CheckReport oracle_agreement(Context& ctx) {
  if (!tiny(ctx.tree())) {
    Tracker tr("oracle_agreement", 0.0);
    tr.skip("skipped: oracle runs only for T <= 2 with at most 2 atoms");
    return std::move(tr).finish();
  }
  return over_equilibria(ctx, "oracle_agreement", 0.0, [&](const EquilibriumSet& set, Tracker& tr) {
    for (std::size_t d : set.distinct) {
      const CertificationReport c = certify_equilibrium(ctx.problem(), set.reports[d].strategy,
                                                        ctx.options().equilibrium, ctx.options().solver);
      if (!c.oracle_run) {
        tr.skip(c.oracle_notice);
        continue;
      }
      tr.add(c.slack - c.improvement, [&] {
        return "start " + std::to_string(d) + " improvement=" + num(c.improvement) + " slack=" + num(c.slack);
      });
    }
  });
}

CheckReport preferred_dominance(Context& ctx) {
  return over_equilibria(ctx, "preferred_dominance", kValueArithmetic,
                         [&](const EquilibriumSet& set, Tracker& tr) {
                           if (!set.preferred) return;
                           const double best = set.reports[*set.preferred].value;
                           for (std::size_t d : set.distinct) {
                             const EquilibriumReport& r = set.reports[d];
                             tr.add(best - r.value, [&] {
                               return "start " + std::to_string(r.start) + " value=" + num(r.value) +
                                      " preferred=" + num(best);
                             });
                           }
                         });
}

CheckReport equilibrium_ball(Context& ctx) {
  // |phi(o)| <= K_t(W_t(o)) along the equilibrium's own wealth, which is
  // tighter than the uniform bound C(x0).
  return over_equilibria(ctx, "equilibrium_ball", 0.0, [&](const EquilibriumSet& set, Tracker& tr) {
    const ScenarioTree& tree = ctx.tree();
    for (const EquilibriumReport& r : set.reports) {
      if (!r.converged) continue;
      const WealthPath w = wealth(tree, ctx.problem().prices(), r.strategy, ctx.problem().x0);
      for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
        const Bound K = ctx.env(tree.node(o).depth).K(w.wealth[o]);
        const double h = std::abs(r.strategy[o]);
        tr.add(slack(h, K), [&] {
          return "start " + std::to_string(r.start) + " node " + tree.path_label(o) + " |phi|=" + num(h) +
                 " K=" + num(K);
        });
      }
    }
  });
}

CheckReport damping_invariance(Context& ctx) {
  Tracker tr("damping_invariance", 0.0);
  const double tol = ctx.options().equilibrium.tolerance;
  std::vector<std::pair<double, Strategy>> limits;
  for (double lambda : {0.25, 0.5, 1.0}) {
    EquilibriumConfig cfg = ctx.options().equilibrium;
    cfg.damping = lambda;
    try {
      const EquilibriumReport r = iterate_fixed_point(ctx.problem(), cfg,
                                                      Strategy::constant(ctx.tree(), 0.0), 0,
                                                      ctx.options().solver);
      if (r.converged) limits.emplace_back(lambda, r.strategy);
    } catch (const std::exception& e) {
      tr.fail("damping " + num(lambda) + ": " + e.what());
    }
  }
  for (std::size_t a = 0; a < limits.size(); ++a)
    for (std::size_t b = a + 1; b < limits.size(); ++b) {
      const double d = limits[a].second.distance(limits[b].second);
      tr.add(10.0 * tol - d, [&] {
        return "damping " + num(limits[a].first) + " vs " + num(limits[b].first) + " distance=" + num(d);
      });
    }
  tr.skip("fewer than two damping factors converged");
  return std::move(tr).finish();
}

using CheckFn = CheckReport (*)(Context&);

struct Entry {
  CheckInfo info;
  CheckFn run;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> list = [] {
    std::vector<Entry> v = {
        {{"asymptotic_elasticity", Suite::bounds, 0.0, {}}, asymptotic_elasticity},
        {{"best_response_continuity", Suite::continuity, 0.0, {}}, best_response_continuity},
        {{"curvature_floor", Suite::bounds, 0.0, {"bestresponse.curvature_floor"}}, curvature_floor},
        {{"damping_invariance", Suite::continuity, 0.0, {"equilibrium.damping_invariance"}},
         damping_invariance},
        {{"derivative_envelopes", Suite::bounds, 0.0, {"bestresponse.derivative_envelopes"}},
         derivative_envelopes},
        {{"derivative_sandwich", Suite::bounds, kFirstDifference, {"preferences.derivative_sandwich"}},
         derivative_sandwich},
        {{"dominance", Suite::bounds, kValueArithmetic, {"bestresponse.dominance"}}, dominance},
        {{"envelope_curvature", Suite::bounds, kSecondDifference, {}}, envelope_curvature},
        {{"envelope_derivative", Suite::bounds, kFirstDifference, {}}, envelope_derivative},
        {{"envelope_positivity", Suite::bounds, 0.0, {"preferences.envelope_positivity"}},
         envelope_positivity},
        {{"equilibrium_ball", Suite::bounds, 0.0, {"equilibrium.certified_ball"}}, equilibrium_ball},
        {{"fixed_point_idempotence", Suite::continuity, 0.0, {"equilibrium.fixed_point_consistency"}},
         fixed_point_idempotence},
        {{"foc_residual", Suite::foc, 0.0, {"bestresponse.foc"}}, foc_residual},
        {{"hoelder_extension", Suite::hoelder, kValueArithmetic, {"market.hoelder_extension"}}, hoelder_extension},
        {{"hoelder_optimizer", Suite::hoelder, 0.0, {"bestresponse.hoelder_optimizer"}}, hoelder_optimizer},
        {{"hoelder_value", Suite::hoelder, 0.0, {"bestresponse.hoelder_value"}}, hoelder_value},
        {{"linear_branch", Suite::bounds, 0.0, {"preferences.linear_branch"}}, linear_branch},
        {{"no_arbitrage", Suite::bounds, kProbabilityTolerance, {"market.uniform_no_arbitrage"}},
         no_arbitrage},
        {{"optimizer_bound", Suite::bounds, 0.0, {"bestresponse.optimizer_bound"}}, optimizer_bound},
        {{"oracle_agreement", Suite::all, 0.0, {"equilibrium.oracle_agreement"}}, oracle_agreement},
        {{"preferred_dominance", Suite::all, kValueArithmetic, {"equilibrium.preferred_dominance"}},
         preferred_dominance},
        {{"price_hoelder", Suite::hoelder, 0.0, {}}, price_hoelder},
        {{"satisfaction_concavity", Suite::bounds, 0.0, {"preferences.strict_concavity"}},
         satisfaction_concavity},
        {{"satisfaction_sandwich", Suite::bounds, 0.0, {"preferences.satisfaction_sandwich"}},
         satisfaction_sandwich},
        {{"value_bounds", Suite::bounds, 0.0, {}}, value_bounds},
        {{"value_shape", Suite::bounds, 0.0, {"bestresponse.monotone_concave"}}, value_shape},
    };
    std::sort(v.begin(), v.end(), [](const Entry& a, const Entry& b) { return a.info.name < b.info.name; });
    return v;
  }();
  return list;
}

}  // namespace

std::optional<Suite> parse_suite(std::string_view name) {
  if (name == "all") return Suite::all;
  if (name == "foc") return Suite::foc;
  if (name == "bounds") return Suite::bounds;
  if (name == "hoelder") return Suite::hoelder;
  if (name == "continuity") return Suite::continuity;
  return std::nullopt;
}

std::string_view suite_name(Suite suite) {
  switch (suite) {
    case Suite::all: return "all";
    case Suite::foc: return "foc";
    case Suite::bounds: return "bounds";
    case Suite::hoelder: return "hoelder";
    case Suite::continuity: return "continuity";
  }
  return "all";
}

const std::vector<CheckInfo>& check_catalog() {
  static const std::vector<CheckInfo> catalog = [] {
    std::vector<CheckInfo> v;
    for (const Entry& e : entries()) v.push_back(e.info);
    return v;
  }();
  return catalog;
}

std::vector<CheckReport> run_suite(const Problem& problem, Suite suite, const VerifyOptions& options) {
  std::vector<CheckReport> out;
  std::optional<Context> ctx;
  try {
    ctx.emplace(problem, options);
  } catch (const std::exception& e) {
    CheckReport r;
    r.name = "setup";
    r.worst_margin = -kInf;
    r.witness = e.what();
    return {r};
  }
  for (std::size_t k = 0; k < entries().size(); ++k) {
    const Entry& e = entries()[k];
    if (suite != Suite::all && e.info.suite != suite) continue;
    ctx->reseed(k);
    CheckReport r;
    try {
      r = e.run(*ctx);
    } catch (const std::exception& ex) {
      r.name = e.info.name;
      r.tolerance = e.info.tolerance;
      r.worst_margin = -kInf;
      r.witness = ex.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

bool all_passed(const std::vector<CheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed(); });
}

}  // namespace pereq
