#pragma once

#include <span>
#include <utility>
#include <vector>

#include "pereq/bestresponse.hpp"
#include "pereq/market.hpp"
#include "pereq/preferences.hpp"

namespace pereq::testing {

inline std::vector<FactorDistribution> repeat(const FactorDistribution& d, int horizon) {
  return std::vector<FactorDistribution>(static_cast<std::size_t>(horizon), d);
}

/// f = scale * e_t on every node of a scalar tree.
inline PriceModel linear_prices(const ScenarioTree& tree, double scale, double C_f, double chi = 1.0) {
  return PriceModel::from_function(
      tree, 1.0, [scale](int, std::span<const double> h) { return scale * h.back(); }, C_f, chi);
}

inline Market coin_market(int horizon, double p_up = 0.5, double scale = 0.5) {
  ScenarioTree tree =
      build_tree(repeat(FactorDistribution::scalar({{1.0, p_up}, {-1.0, 1.0 - p_up}}, 1.0), horizon));
  PriceModel prices = linear_prices(tree, scale, scale);
  return Market::certify(std::move(tree), std::move(prices));
}

inline Preferences exponential_prefs(double a = 1.0, double k = 2.0, double s = 1.0) {
  return {Utility::exponential(a), GainLoss::arctan(k, s)};
}

inline Preferences hyperbolic_prefs(double b = 1.0, double k = 2.0, double s = 1.0) {
  return {Utility::hyperbolic(b), GainLoss::arctan(k, s)};
}

}  // namespace pereq::testing
