#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "models.hpp"
#include "pereq/bestresponse.hpp"

using namespace pereq;
using pereq::testing::coin_market;
using pereq::testing::exponential_prefs;
using pereq::testing::hyperbolic_prefs;

namespace {

/// V(x) = -exp(-x), independent of the node and of any reference.
class PlainExponential final : public ValueFunction {
 public:
  int stage() const override { return 1; }
  ValuePoint evaluate(NodeId, double x) const override {
    const double e = std::exp(-x);
    return {-e, e, -e};
  }
};

/// Root of a decreasing function on [lo, hi] by plain bisection.
double bisect(const std::function<double(double)>& g, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Expected satisfaction of x0 + h f against ref, summed directly.
double one_period_objective(const Problem& pb, const ReferenceDistribution& ref, double h) {
  double total = 0.0;
  const auto& tree = pb.tree();
  for (NodeId c = 1; c < tree.size(); ++c)
    total += tree.node(c).probability *
             satisfaction(pb.preferences.utility, pb.preferences.gain_loss,
                          pb.x0 + h * pb.prices().increment(c), ref);
  return total;
}

}  // namespace

TEST(OneStepTerms, ZeroPositionAveragesNextValue) {
  const auto m = coin_market(1, 0.3);
  const PlainExponential V;
  EXPECT_DOUBLE_EQ(gamma_big(V, m.tree, m.prices, 0, 0.4, 0.0), -std::exp(-0.4));
}

TEST(OneStepTerms, FairCoinHandValue) {
  const auto m = coin_market(1);
  const PlainExponential V;
  EXPECT_NEAR(gamma_big(V, m.tree, m.prices, 0, 0.0, 1.0), -1.1276259652063807852, 1e-15);
  EXPECT_EQ(gamma_small(V, m.tree, m.prices, 0, 0.0, 0.0), 0.0);
}

TEST(OneStepTerms, GammaIsTheDerivativeOfTheObjective) {
  const auto m = coin_market(1, 0.65);
  const PlainExponential V;
  for (double h : {-2.0, -0.3, 0.0, 0.9, 3.0}) {
    const double step = 1e-6;
    const double fd = (gamma_big(V, m.tree, m.prices, 0, 0.2, h + step) -
                       gamma_big(V, m.tree, m.prices, 0, 0.2, h - step)) / (2 * step);
    const double g = gamma_small(V, m.tree, m.prices, 0, 0.2, h);
    EXPECT_NEAR(fd, g, 1e-6 * std::abs(g) + 1e-9);
  }
}

TEST(SolveOneStep, SymmetricMarketStaysFlat) {
  const Problem pb = Problem::make(coin_market(1), hyperbolic_prefs(), 0.0);
  const auto V = terminal_value(pb.preferences, ReferenceDistribution({{-1.0, 0.5}, {2.0, 0.5}}), 1);
  const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, 0.0, pb.envelopes->stage(0));
  EXPECT_EQ(sol.position, 0.0);
  EXPECT_EQ(sol.residual, 0.0);
}

TEST(SolveOneStep, ClosedFormOnTheLossBranch) {
  // A reference far above every reachable wealth keeps nu on its linear
  // branch, so the optimizer is the expected-utility one: ln(p/(1-p))/a.
  const auto start = std::chrono::steady_clock::now();
  const Problem pb = Problem::make(coin_market(1, 0.7), exponential_prefs(1.0), 0.0);
  const auto V = terminal_value(pb.preferences, ReferenceDistribution::degenerate(50.0), 1);
  const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, 0.0, pb.envelopes->stage(0));
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_NEAR(sol.position, 0.847297860387203614, 1e-8);
  EXPECT_LE(std::abs(sol.residual), 1e-10);
  EXPECT_LT(elapsed, 0.1);
}

TEST(SolveOneStep, AgreesWithBisectionOnMixedReferences) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> p_up(0.2, 0.8), w(-1.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const auto prefs = trial % 2 ? exponential_prefs(0.8, 2.0, 0.5) : hyperbolic_prefs(1.0, 3.0, 1.0);
    const Problem pb = Problem::make(coin_market(1, p_up(rng)), prefs, 0.0);
    const ReferenceDistribution ref({{w(rng), 0.5}, {w(rng) + 2.0, 0.5}});
    const auto V = terminal_value(pb.preferences, ref, 1);
    const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, 0.0, pb.envelopes->stage(0));
    const double step = 1e-7;
    const double oracle = bisect(
        [&](double h) {
          return one_period_objective(pb, ref, h + step) - one_period_objective(pb, ref, h - step);
        },
        -20.0, 20.0);
    EXPECT_NEAR(sol.position, oracle, 1e-6) << trial;
    EXPECT_LE(std::abs(sol.residual), 1e-10);
    EXPECT_LE(std::abs(sol.position), sol.bracket);
  }
}

TEST(SolveOneStep, RespectsBracketOnRandomInstances) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> p_up(0.1, 0.9), x(-3.0, 3.0), w(-3.0, 3.0);
  const auto prefs = hyperbolic_prefs();
  for (int trial = 0; trial < 200; ++trial) {
    const Problem pb = Problem::make(coin_market(1, p_up(rng)), prefs, 0.0, 0.1);
    const auto V = terminal_value(pb.preferences, ReferenceDistribution({{w(rng), 0.3}, {w(rng), 0.7}}), 1);
    const double at = x(rng);
    const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, at, pb.envelopes->stage(0));
    EXPECT_LE(std::abs(gamma_small(*V, pb.tree(), pb.prices(), 0, at, sol.position)), 1e-10);
    EXPECT_LE(std::abs(sol.position), static_cast<double>(pb.envelopes->stage(0).K(at)));
  }
}

TEST(TerminalValue, MatchesSatisfactionAndItsDerivative) {
  const auto prefs = exponential_prefs();
  const ReferenceDistribution ref({{-0.5, 0.4}, {0.5, 0.6}});
  const TerminalValue V(prefs, ref, 2);
  for (double x : {-1.0, 0.0, 0.7}) {
    const auto pt = V.evaluate(0, x);
    EXPECT_EQ(pt.value, satisfaction(prefs.utility, prefs.gain_loss, x, ref));
    const double fd = (V.evaluate(0, x + 1e-5).value - V.evaluate(0, x - 1e-5).value) / 2e-5;
    EXPECT_NEAR(pt.d1, fd, 1e-4 * pt.d1);
  }
  EXPECT_EQ(TerminalValue(prefs, ReferenceDistribution::degenerate(0.3), 1).evaluate(0, 0.3).value,
            prefs.utility(0.3));
}

TEST(ValueRecursion, EnvelopeDerivativesMatchFiniteDifferences) {
  const Problem pb = Problem::make(coin_market(2, 0.6), hyperbolic_prefs(), 0.0);
  const ReferenceDistribution ref({{-0.4, 0.3}, {0.1, 0.3}, {0.8, 0.4}});
  const auto rec = value_recursion(pb, ref);
  for (int t = 0; t < 2; ++t) {
    const auto& v = rec->stage(t);
    const NodeId o = pb.tree().depth_begin(t);
    for (double x : {-0.5, 0.0, 0.6}) {
      const auto pt = v.evaluate(o, x);
      const double step = 1e-5;
      const double d1 = (v.evaluate(o, x + step).value - v.evaluate(o, x - step).value) / (2 * step);
      const double d2 = (v.evaluate(o, x + step).d1 - v.evaluate(o, x - step).d1) / (2 * step);
      EXPECT_NEAR(pt.d1, d1, 1e-5 * std::abs(pt.d1));
      EXPECT_NEAR(pt.d2, d2, 1e-3 * std::abs(pt.d2));
      EXPECT_GE(pt.value, gamma_big(rec->stage(t + 1), pb.tree(), pb.prices(), o, x, 0.0));
    }
  }
}

TEST(BestResponse, SymmetricMarketAnyReferenceGivesZero) {
  const Problem pb = Problem::make(coin_market(2), hyperbolic_prefs(), 0.0);
  for (double level : {0.0, 0.7, -1.3}) {
    const auto br = best_response(pb, Strategy::constant(pb.tree(), level));
    for (double h : br.strategy.positions()) EXPECT_EQ(h, 0.0);
  }
}

TEST(BestResponse, OnePeriodMatchesSolveOneStep) {
  const Problem pb = Problem::make(coin_market(1, 0.7), exponential_prefs(), 0.0);
  const auto br = best_response(pb, Strategy::constant(pb.tree(), 0.4));
  const auto ref = reference_distribution(pb.tree(), pb.prices(), Strategy::constant(pb.tree(), 0.4), 0.0);
  const auto V = terminal_value(pb.preferences, ref, 1);
  const auto sol = solve_one_step(*V, pb.tree(), pb.prices(), 0, 0.0, pb.envelopes->stage(0));
  EXPECT_EQ(br.strategy[0], sol.position);
  EXPECT_NEAR(br.value, one_period_objective(pb, ref, sol.position), 1e-15);
}

TEST(BestResponse, ContinuousInTheReference) {
  const Problem pb = Problem::make(coin_market(2, 0.65), hyperbolic_prefs(), 0.0);
  std::vector<double> pos{0.3, -0.2, 0.5};
  const auto a = best_response(pb, Strategy(pos));
  for (double& v : pos) v += 1e-6;
  const auto b = best_response(pb, Strategy(pos));
  EXPECT_LE(a.strategy.distance(b.strategy), 1e-3);
}

TEST(ReferenceLaw, Examples) {
  const auto one = coin_market(1);
  EXPECT_EQ(reference_distribution(one.tree, one.prices, Strategy::constant(one.tree, 0.0), 2.0).atoms(),
            (std::vector<std::pair<double, double>>{{2.0, 1.0}}));
  EXPECT_EQ(reference_distribution(one.tree, one.prices, Strategy::constant(one.tree, 1.0), 0.0).atoms(),
            (std::vector<std::pair<double, double>>{{-0.5, 0.5}, {0.5, 0.5}}));
  const auto two = coin_market(2);
  EXPECT_EQ(reference_distribution(two.tree, two.prices, Strategy::constant(two.tree, 1.0), 0.0).atoms(),
            (std::vector<std::pair<double, double>>{{-1.0, 0.25}, {0.0, 0.5}, {1.0, 0.25}}));
}
