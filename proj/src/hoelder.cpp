#include "pereq/hoelder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pereq {

double euclidean_norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ModelError("points of different dimension");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

HoelderExtension::HoelderExtension(std::vector<Point> points, std::vector<double> values,
                                   double C, double chi, double radius)
    : points_(std::move(points)), values_(std::move(values)), C_(C), chi_(chi), radius_(radius) {
  if (points_.empty()) throw ModelError("Hoelder extension needs a non-empty sample set");
  if (points_.size() != values_.size()) throw ModelError("sample points and values differ in size");
  if (!(C_ >= 0.0)) throw ModelError("Hoelder constant must be non-negative");
  if (!(chi_ > 0.0 && chi_ <= 1.0)) throw ModelError("Hoelder exponent must lie in (0,1]");
  if (!(radius_ >= 0.0)) throw ModelError("radius must be non-negative");
  const std::size_t dim = points_.front().size();
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].size() != dim) throw ModelError("sample points of different dimension");
    if (euclidean_norm(points_[i]) > radius_)
      throw ModelError("sample point " + std::to_string(i) + " lies outside B(0,R)");
  }
}

double HoelderExtension::operator()(std::span<const double> e) const {
  const std::size_t dim = points_.front().size();
  if (e.size() != dim) throw ModelError("evaluation point has the wrong dimension");
  Point q(e.begin(), e.end());
  const double n = euclidean_norm(q);
  if (n > radius_) {
    const double scale = radius_ / n;
    for (double& x : q) x *= scale;
  }
  // On K the infimum equals f whenever f is C-Hoelder there; return it
  // directly so rounding in the other candidates cannot undercut it.
  for (std::size_t i = 0; i < points_.size(); ++i)
    if (points_[i] == q) return values_[i];
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points_.size(); ++i)
    best = std::min(best, values_[i] + C_ * std::pow(euclidean_distance(q, points_[i]), chi_));
  return best;
}

double HoelderExtension::uniform_bound() const {
  return C_ * (1.0 + std::pow(2.0 * radius_, chi_));
}

HoelderExtension hoelder_extend(std::vector<Point> points, std::vector<double> values, double C,
                                double chi, double radius) {
  return HoelderExtension(std::move(points), std::move(values), C, chi, radius);
}

double estimate_hoelder_constant(const std::function<double(std::span<const double>)>& f,
                                 std::span<const std::pair<Point, Point>> pairs, double chi) {
  double best = 0.0;
  for (const auto& [a, b] : pairs) {
    const double d = euclidean_distance(a, b);
    if (d == 0.0) throw ModelError("Hoelder estimate given a pair of coincident points");
    best = std::max(best, std::abs(f(a) - f(b)) / std::pow(d, chi));
  }
  return best;
}

PriceHoelderEstimate estimate_price_hoelder(const ScenarioTree& tree, const PriceModel& prices) {
  PriceHoelderEstimate est;
  const double chi = prices.exponent();
  for (int t = 1; t <= tree.horizon(); ++t) {
    const NodeId begin = tree.depth_begin(t);
    const NodeId end = tree.depth_end(t);
    std::vector<Point> hist;
    hist.reserve(end - begin);
    for (NodeId a = begin; a < end; ++a) hist.push_back(tree.history(a));
    for (NodeId a = begin; a < end; ++a) {
      const double fa = prices.increment(a);
      if (est.sup_node == kNoNode || std::abs(fa) > est.sup_abs) {
        est.sup_abs = std::abs(fa);
        est.sup_node = a;
      }
      for (NodeId b = a + 1; b < end; ++b) {
        const double d = euclidean_distance(hist[a - begin], hist[b - begin]);
        if (d == 0.0) continue;
        const double r = std::abs(fa - prices.increment(b)) / std::pow(d, chi);
        if (est.witness_a == kNoNode || r > est.constant) {
          est.constant = r;
          est.witness_a = a;
          est.witness_b = b;
        }
      }
    }
  }
  return est;
}

}  // namespace pereq
