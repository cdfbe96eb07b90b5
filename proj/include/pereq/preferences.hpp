#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pereq {

class PreferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RealFunction = std::function<double(double)>;

struct Jet {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Concave increasing utility U with derivatives and upper bound C_U.
class Utility {
 public:
  Utility(std::string name, RealFunction value, RealFunction d1, RealFunction d2,
          double upper_bound, double supremum);

  /// U(x) = -exp(-a x).
  static Utility exponential(double a, double upper_bound = 1.0);
  /// U(x) = x - sqrt(x^2 + b^2); polynomial tails keep the propagated
  /// bounds finite over several stages.
  static Utility hyperbolic(double b, double upper_bound = 1.0);
  /// Knots (x, U, U', U''): U by cubic Hermite on (U, U'), U' by cubic
  /// Hermite on (U', U''), U'' piecewise linear. Left of the knots the end
  /// quadratic is continued; right of them U approaches
  /// U_n + U'_n / kappa exponentially with kappa = -U''_n / U'_n.
  static Utility tabulated(std::vector<double> x, std::vector<double> u, std::vector<double> du,
                           std::vector<double> d2u, double upper_bound);

  double operator()(double x) const { return value_(x); }
  double derivative(double x) const { return d1_(x); }
  double second_derivative(double x) const { return d2_(x); }
  /// U, U', U'' together; shares work for the built-in families.
  Jet jet(double x) const { return jet_ ? jet_(x) : Jet{value_(x), d1_(x), d2_(x)}; }
  double upper_bound() const { return upper_bound_; }
  /// lim U(x) as x -> infinity.
  double supremum() const { return supremum_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  RealFunction value_, d1_, d2_;
  std::function<Jet(double)> jet_;
  double upper_bound_;
  double supremum_;
};

/// Gain-loss function nu with loss slope k_minus and bound C_nu.
class GainLoss {
 public:
  GainLoss(std::string name, RealFunction value, RealFunction d1, RealFunction d2,
           double k_minus, double bound);

  /// nu(x) = k x for x <= 0, k s atan(x / s) for x > 0. C_nu is
  /// max(k s pi / 2, sup |nu''|) with the sup scanned numerically.
  static GainLoss arctan(double k_minus, double scale);

  double operator()(double x) const { return value_(x); }
  double derivative(double x) const { return d1_(x); }
  double second_derivative(double x) const { return d2_(x); }
  double loss_slope() const { return k_minus_; }
  double bound() const { return bound_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  RealFunction value_, d1_, d2_;
  double k_minus_;
  double bound_;
};

struct Preferences {
  Utility utility;
  GainLoss gain_loss;
};

/// Finite law of the reference wealth; atoms sorted by wealth.
class ReferenceDistribution {
 public:
  ReferenceDistribution() = default;
  /// Validates probabilities and merges wealths closer than merge_tolerance.
  explicit ReferenceDistribution(std::vector<std::pair<double, double>> atoms,
                                 double merge_tolerance = 1e-12);
  static ReferenceDistribution degenerate(double w) { return ReferenceDistribution({{w, 1.0}}); }

  const std::vector<std::pair<double, double>>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }

 private:
  std::vector<std::pair<double, double>> atoms_;
};

struct SatisfactionPoint {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// U(x) + sum_j q_j nu(U(x) - U(w_j)).
double satisfaction(const Utility& U, const GainLoss& nu, double x,
                    const ReferenceDistribution& reference);

/// Satisfaction with its first two derivatives in x.
SatisfactionPoint satisfaction_derivatives(const Utility& U, const GainLoss& nu, double x,
                                           const ReferenceDistribution& reference);

struct ProbeGrid {
  double lo = -10.0;
  double hi = 10.0;
  std::size_t points = 1001;
  double fd_step = 1e-5;
  double fd_tolerance = 1e-4;
  std::vector<double> nodes() const;
};

struct ValidationIssue {
  std::string check;
  double witness = 0.0;
  std::string detail;
};

struct ValidationReport {
  std::vector<std::string> checks;
  std::vector<ValidationIssue> failures;
  /// Smallest grid point beyond which y V'(y) < V(y)/2 for the shifted
  /// satisfaction; empty when the probe never settles on the grid.
  std::optional<double> elasticity_threshold;
  bool ok() const { return failures.empty(); }
};

ValidationReport validate_preferences(const Utility& U, const GainLoss& nu,
                                      const ProbeGrid& grid = {});

/// Combines Hoelder constants (C_i, theta_i) of n summands with a uniform
/// bound: returns (n max C_i + 2 bound, min theta_i).
std::pair<double, double> fold_hoelder(std::span<const std::pair<double, double>> constants,
                                       double uniform_bound);

}  // namespace pereq
