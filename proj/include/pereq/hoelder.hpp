#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "pereq/market.hpp"

namespace pereq {

using Point = std::vector<double>;

/// McShane-type extension of a Hoelder function known on a finite set K
/// inside the ball B(0, R):
///   F(e) = min over k in K of f(k) + C |e - k|^chi,
///   g(e) = F(e) for |e| <= R, F(pi_R(e)) otherwise.
class HoelderExtension {
 public:
  HoelderExtension(std::vector<Point> points, std::vector<double> values, double C,
                   double chi, double radius);

  double operator()(std::span<const double> e) const;

  /// C (1 + (2R)^chi), the uniform bound on |g| when f satisfies the
  /// sample-set bounds.
  double uniform_bound() const;

  double constant() const { return C_; }
  double exponent() const { return chi_; }
  double radius() const { return radius_; }
  const std::vector<Point>& points() const { return points_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<Point> points_;
  std::vector<double> values_;
  double C_;
  double chi_;
  double radius_;
};

HoelderExtension hoelder_extend(std::vector<Point> points, std::vector<double> values,
                                double C, double chi, double radius);

double euclidean_distance(std::span<const double> a, std::span<const double> b);
double euclidean_norm(std::span<const double> a);

/// max over pairs of |f(a) - f(b)| / |a - b|^chi. Throws ModelError on a
/// pair of coincident points.
double estimate_hoelder_constant(const std::function<double(std::span<const double>)>& f,
                                 std::span<const std::pair<Point, Point>> pairs, double chi);

struct PriceHoelderEstimate {
  double constant = 0.0;   // max ratio over same-depth node pairs
  NodeId witness_a = kNoNode;
  NodeId witness_b = kNoNode;
  double sup_abs = 0.0;    // max |f| over nodes
  NodeId sup_node = kNoNode;
};

/// Hoelder ratio of the increments over all same-depth node pairs with
/// distinct histories.
PriceHoelderEstimate estimate_price_hoelder(const ScenarioTree& tree,
                                            const PriceModel& prices);

}  // namespace pereq
