#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "models.hpp"
#include "pereq/verify.hpp"

using namespace pereq;
using pereq::testing::coin_market;
using pereq::testing::hyperbolic_prefs;

namespace {

const CheckReport& find(const std::vector<CheckReport>& reports, const std::string& name) {
  const auto it = std::find_if(reports.begin(), reports.end(), [&](const CheckReport& r) { return r.name == name; });
  if (it == reports.end()) throw std::runtime_error("no report " + name);
  return *it;
}

}  // namespace

TEST(CheckCatalog, EveryModuleInvariantHasExactlyOneCheck) {
  const std::vector<std::string> invariants = {
      "preferences.linear_branch",         "preferences.satisfaction_sandwich",
      "preferences.derivative_sandwich",   "preferences.envelope_positivity",
      "preferences.strict_concavity",      "bestresponse.foc",
      "bestresponse.optimizer_bound",      "bestresponse.curvature_floor",
      "bestresponse.derivative_envelopes", "bestresponse.hoelder_optimizer",
      "bestresponse.hoelder_value",        "bestresponse.monotone_concave",
      "bestresponse.dominance",            "equilibrium.fixed_point_consistency",
      "equilibrium.oracle_agreement",      "equilibrium.preferred_dominance",
      "equilibrium.certified_ball",        "equilibrium.damping_invariance",
  };
  std::map<std::string, int> owners;
  for (const auto& info : check_catalog())
    for (const auto& id : info.invariants) ++owners[id];
  for (const auto& id : invariants) EXPECT_EQ(owners[id], 1) << id;
  for (const auto& [id, count] : owners) {
    const bool listed = std::find(invariants.begin(), invariants.end(), id) != invariants.end();
    EXPECT_TRUE(listed || id.rfind("market.", 0) == 0) << "unexpected invariant " << id;
  }
}

TEST(CheckCatalog, SortedByName) {
  const auto& c = check_catalog();
  EXPECT_TRUE(std::is_sorted(c.begin(), c.end(), [](const CheckInfo& a, const CheckInfo& b) { return a.name < b.name; }));
}

TEST(Suite, SelectorNamesRoundTrip) {
  for (Suite s : {Suite::all, Suite::foc, Suite::bounds, Suite::hoelder, Suite::continuity})
    EXPECT_EQ(parse_suite(suite_name(s)), s);
  EXPECT_FALSE(parse_suite("everything").has_value());
}

TEST(Suite, FocSelectorGivesOneReport) {
  const Problem pb = Problem::make(coin_market(2), hyperbolic_prefs(), 0.0);
  VerifyOptions opt;
  opt.samples = 100;
  const auto reports = run_suite(pb, Suite::foc, opt);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].name, "foc_residual");
  EXPECT_TRUE(reports[0].passed());
}

TEST(Suite, SymmetricModelPassesEverything) {
  const Problem pb = Problem::make(coin_market(2), hyperbolic_prefs(), 0.0);
  const auto reports = run_suite(pb, Suite::all);
  EXPECT_EQ(reports.size(), check_catalog().size());
  for (const auto& r : reports) EXPECT_TRUE(r.passed()) << r.name << ": " << r.witness;
}

TEST(Suite, DeterministicForAFixedSeed) {
  const Problem pb = Problem::make(coin_market(2, 0.6), hyperbolic_prefs(), 0.0);
  VerifyOptions opt;
  opt.samples = 200;
  opt.seed = 99;
  const auto a = run_suite(pb, Suite::all, opt);
  const auto b = run_suite(pb, Suite::all, opt);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].instances, b[i].instances);
    EXPECT_EQ(a[i].worst_margin, b[i].worst_margin);
    EXPECT_EQ(a[i].witness, b[i].witness);
  }
}

TEST(Suite, UnderstatedPriceConstantIsWitnessed) {
  // Atoms 0.2 apart move the price by 1, a ratio of 5 against C_f = 0.5.
  auto tree = build_tree({FactorDistribution::scalar({{0.1, 0.5}, {-0.1, 0.5}}, 0.1)});
  auto prices = PriceModel::from_table(tree, 1.0, {0.0, 0.5, -0.5}, 0.5, 1.0);
  const Problem pb = Problem::make(Market::certify(std::move(tree), std::move(prices)), hyperbolic_prefs(), 0.0);
  VerifyOptions opt;
  opt.samples = 100;
  const auto reports = run_suite(pb, Suite::hoelder, opt);
  const auto& r = find(reports, "price_hoelder");
  EXPECT_FALSE(r.passed());
  EXPECT_NE(r.witness.find("nodes 0 and 1"), std::string::npos) << r.witness;
}
