#include "pereq/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

namespace pereq {

Utility::Utility(std::string name, RealFunction value, RealFunction d1, RealFunction d2,
                 double upper_bound, double supremum)
    : name_(std::move(name)),
      value_(std::move(value)),
      d1_(std::move(d1)),
      d2_(std::move(d2)),
      upper_bound_(upper_bound),
      supremum_(supremum) {
  if (!(upper_bound_ > 0.0)) throw PreferenceError("C_U must be positive");
  if (supremum_ > upper_bound_) throw PreferenceError("utility supremum exceeds C_U");
}

Utility Utility::exponential(double a, double upper_bound) {
  if (!(a > 0.0)) throw PreferenceError("exponential utility needs a > 0");
  Utility u(
      "exponential", [a](double x) { return -std::exp(-a * x); },
      [a](double x) { return a * std::exp(-a * x); },
      [a](double x) { return -a * a * std::exp(-a * x); }, upper_bound, 0.0);
  u.jet_ = [a](double x) {
    const double e = std::exp(-a * x);
    return Jet{-e, a * e, -a * a * e};
  };
  return u;
}

Utility Utility::hyperbolic(double b, double upper_bound) {
  if (!(b > 0.0)) throw PreferenceError("hyperbolic utility needs b > 0");
  const double b2 = b * b;
  // std::hypot is several times slower and the envelope scans call this
  // hundreds of millions of times at T = 3.
  auto radius = [b, b2](double x) {
    return std::abs(x) < 1e150 ? std::sqrt(x * x + b2) : std::hypot(x, b);
  };
  Utility u(
      "hyperbolic",
      [b2, radius](double x) {
        const double r = radius(x);
        return x >= 0.0 ? -b2 / (x + r) : x - r;
      },
      [b2, radius](double x) {
        const double r = radius(x);
        return x >= 0.0 ? b2 / (r * (r + x)) : 1.0 - x / r;
      },
      [b2, radius](double x) {
        const double r = radius(x);
        return -((b2 / r) / r) / r;
      },
      upper_bound, 0.0);
  u.jet_ = [b2, radius](double x) {
    const double r = radius(x);
    if (x >= 0.0) return Jet{-b2 / (x + r), b2 / (r * (r + x)), -((b2 / r) / r) / r};
    return Jet{x - r, 1.0 - x / r, -((b2 / r) / r) / r};
  };
  return u;
}

namespace {

struct Knots {
  std::vector<double> x, u, du, d2u;
  double kappa = 0.0;

  std::size_t interval(double t) const {
    auto it = std::upper_bound(x.begin(), x.end(), t);
    std::size_t k = static_cast<std::size_t>(it - x.begin());
    return std::clamp<std::size_t>(k, 1, x.size() - 1) - 1;
  }

  static double hermite(double y0, double y1, double m0, double m1, double h, double s) {
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * m0 + (-2 * s3 + 3 * s2) * y1 +
           (s3 - s2) * h * m1;
  }
  static double hermite_slope(double y0, double y1, double m0, double m1, double h, double s) {
    const double s2 = s * s;
    return ((6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * h * m0 + (-6 * s2 + 6 * s) * y1 +
            (3 * s2 - 2 * s) * h * m1) /
           h;
  }

  double value(double t) const {
    if (t < x.front()) {
      const double d = t - x.front();
      return u.front() + du.front() * d + 0.5 * d2u.front() * d * d;
    }
    if (t > x.back()) {
      return u.back() + du.back() / kappa * (1.0 - std::exp(-kappa * (t - x.back())));
    }
    const std::size_t k = interval(t);
    const double h = x[k + 1] - x[k];
    return hermite(u[k], u[k + 1], du[k], du[k + 1], h, (t - x[k]) / h);
  }
  double slope(double t) const {
    if (t < x.front()) return du.front() + d2u.front() * (t - x.front());
    if (t > x.back()) return du.back() * std::exp(-kappa * (t - x.back()));
    const std::size_t k = interval(t);
    const double h = x[k + 1] - x[k];
    return hermite(du[k], du[k + 1], d2u[k], d2u[k + 1], h, (t - x[k]) / h);
  }
  double curvature(double t) const {
    if (t < x.front()) return d2u.front();
    if (t > x.back()) return -kappa * du.back() * std::exp(-kappa * (t - x.back()));
    const std::size_t k = interval(t);
    const double h = x[k + 1] - x[k];
    const double s = (t - x[k]) / h;
    return (1.0 - s) * d2u[k] + s * d2u[k + 1];
  }
};

}  // namespace

Utility Utility::tabulated(std::vector<double> x, std::vector<double> u, std::vector<double> du,
                           std::vector<double> d2u, double upper_bound) {
  const std::size_t n = x.size();
  if (n < 2 || u.size() != n || du.size() != n || d2u.size() != n)
    throw PreferenceError("tabulated utility needs >= 2 knots with U, U', U'' each");
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (!(x[i] < x[i + 1])) throw PreferenceError("tabulated utility knots must increase");
  for (std::size_t i = 0; i < n; ++i)
    if (!(du[i] > 0.0) || !(d2u[i] < 0.0))
      throw PreferenceError("tabulated utility needs U' > 0 and U'' < 0 at every knot");
  auto k = std::make_shared<Knots>();
  k->x = std::move(x);
  k->u = std::move(u);
  k->du = std::move(du);
  k->d2u = std::move(d2u);
  k->kappa = -k->d2u.back() / k->du.back();
  const double sup = k->u.back() + k->du.back() / k->kappa;
  return Utility(
      "tabulated", [k](double t) { return k->value(t); }, [k](double t) { return k->slope(t); },
      [k](double t) { return k->curvature(t); }, upper_bound, sup);
}

GainLoss::GainLoss(std::string name, RealFunction value, RealFunction d1, RealFunction d2,
                   double k_minus, double bound)
    : name_(std::move(name)),
      value_(std::move(value)),
      d1_(std::move(d1)),
      d2_(std::move(d2)),
      k_minus_(k_minus),
      bound_(bound) {
  if (!(k_minus_ > 0.0)) throw PreferenceError("k_minus must be positive");
  if (!(bound_ > 0.0)) throw PreferenceError("C_nu must be positive");
}

GainLoss GainLoss::arctan(double k, double s) {
  if (!(k > 0.0)) throw PreferenceError("gain-loss needs k_minus > 0");
  if (!(s > 0.0)) throw PreferenceError("gain-loss needs scale s > 0");
  auto value = [k, s](double x) { return x <= 0.0 ? k * x : k * s * std::atan(x / s); };
  auto d1 = [k, s](double x) {
    if (x <= 0.0) return k;
    const double r = x / s;
    return k / (1.0 + r * r);
  };
  auto d2 = [k, s](double x) {
    if (x <= 0.0) return 0.0;
    const double r = x / s;
    const double q = 1.0 + r * r;
    return -2.0 * k * r / (s * q * q);
  };
  // Coarse scan, then a fine scan around the coarse maximizer.
  double best = 0.0;
  double arg = 0.0;
  const int n = 20000;
  const double span = 20.0 * s;
  for (int i = 0; i <= n; ++i) {
    const double x = span * i / n;
    const double v = std::abs(d2(x));
    if (v > best) {
      best = v;
      arg = x;
    }
  }
  const double step = span / n;
  for (int i = -1000; i <= 1000; ++i) {
    const double x = arg + step * i / 1000.0;
    if (x >= 0.0) best = std::max(best, std::abs(d2(x)));
  }
  const double bound = std::max(k * s * std::numbers::pi / 2.0, best * (1.0 + 1e-9));
  return GainLoss("arctan", value, d1, d2, k, bound);
}

ReferenceDistribution::ReferenceDistribution(std::vector<std::pair<double, double>> atoms,
                                             double merge_tolerance) {
  if (atoms.empty()) throw PreferenceError("reference distribution has no atoms");
  double total = 0.0;
  for (const auto& [w, q] : atoms) {
    if (!std::isfinite(w)) throw PreferenceError("reference wealth is not finite");
    if (!(q > 0.0 && q <= 1.0)) throw PreferenceError("reference probability outside (0,1]");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os.precision(17);
    os << "reference probabilities sum to " << total;
    throw PreferenceError(os.str());
  }
  std::stable_sort(atoms.begin(), atoms.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& a : atoms) {
    if (!atoms_.empty() && a.first - atoms_.back().first <= merge_tolerance)
      atoms_.back().second += a.second;
    else
      atoms_.push_back(a);
  }
}

double satisfaction(const Utility& U, const GainLoss& nu, double x,
                    const ReferenceDistribution& reference) {
  const double u = U(x);
  double s = u;
  for (const auto& [w, q] : reference.atoms()) s += q * nu(u - U(w));
  return s;
}

SatisfactionPoint satisfaction_derivatives(const Utility& U, const GainLoss& nu, double x,
                                           const ReferenceDistribution& reference) {
  const double u = U(x);
  const double u1 = U.derivative(x);
  const double u2 = U.second_derivative(x);
  double g0 = 0.0, g1 = 0.0, g2 = 0.0;
  for (const auto& [w, q] : reference.atoms()) {
    const double d = u - U(w);
    g0 += q * nu(d);
    g1 += q * nu.derivative(d);
    g2 += q * nu.second_derivative(d);
  }
  return {u + g0, u1 * (1.0 + g1), u2 * (1.0 + g1) + u1 * u1 * g2};
}

std::vector<double> ProbeGrid::nodes() const {
  if (points < 2 || !(hi > lo)) throw PreferenceError("probe grid needs lo < hi and >= 2 points");
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ValidationReport validate_preferences(const Utility& U, const GainLoss& nu, const ProbeGrid& grid) {
  ValidationReport rep;
  const auto xs = grid.nodes();
  const double k = nu.loss_slope();
  const double C_nu = nu.bound();
  const double C_U = U.upper_bound();

  auto run = [&](const std::string& name, auto&& pred) {
    rep.checks.push_back(name);
    for (double x : xs) {
      std::string detail;
      if (!pred(x, detail)) {
        rep.failures.push_back({name, x, detail});
        return;
      }
    }
  };

  run("U' > 0", [&](double x, std::string& d) {
    const double v = U.derivative(x);
    d = "U'(x) = " + fmt(v);
    return v > 0.0;
  });
  run("U'' < 0", [&](double x, std::string& d) {
    const double v = U.second_derivative(x);
    d = "U''(x) = " + fmt(v);
    return v < 0.0;
  });
  run("U <= C_U", [&](double x, std::string& d) {
    const double v = U(x);
    d = "U(x) = " + fmt(v);
    return v <= C_U;
  });
  {
    rep.checks.push_back("nu(0) = 0");
    if (nu(0.0) != 0.0) rep.failures.push_back({"nu(0) = 0", 0.0, "nu(0) = " + fmt(nu(0.0))});
  }
  run("nu = k x on losses", [&](double x, std::string& d) {
    if (x > 0.0) return true;
    d = "nu(x) = " + fmt(nu(x));
    return nu(x) == k * x;
  });
  run("0 < nu' <= k", [&](double x, std::string& d) {
    const double v = nu.derivative(x);
    d = "nu'(x) = " + fmt(v);
    return v > 0.0 && v <= k;
  });
  {
    const std::string name = "nu' nonincreasing on gains";
    rep.checks.push_back(name);
    double prev = nu.derivative(0.0);
    for (double x : xs) {
      if (x <= 0.0) continue;
      const double v = nu.derivative(x);
      if (v > prev) {
        rep.failures.push_back({name, x, "nu'(x) = " + fmt(v) + " > " + fmt(prev)});
        break;
      }
      prev = v;
    }
  }
  run("|nu''| <= C_nu", [&](double x, std::string& d) {
    const double v = nu.second_derivative(x);
    d = "nu''(x) = " + fmt(v);
    return std::abs(v) <= C_nu;
  });
  run("nu <= C_nu", [&](double x, std::string& d) {
    const double v = nu(x);
    d = "nu(x) = " + fmt(v);
    return v <= C_nu;
  });
  {
    const std::string name = "nu C2 at 0";
    rep.checks.push_back(name);
    const double h = grid.fd_step;
    const double right = nu.derivative(h * 1e-6);
    const double curv = nu.second_derivative(0.0);
    const double curv_right = nu.second_derivative(h * 1e-6);
    if (std::abs(right - k) > grid.fd_tolerance * k)
      rep.failures.push_back({name, 0.0, "nu'(0+) = " + fmt(right) + " differs from k"});
    else if (curv != 0.0 || std::abs(curv_right) > grid.fd_tolerance * std::max(1.0, C_nu))
      rep.failures.push_back({name, 0.0, "nu''(0) = " + fmt(curv) + ", nu''(0+) = " + fmt(curv_right)});
  }
  {
    const std::string name = "nu Lipschitz k";
    rep.checks.push_back(name);
    bool failed = false;
    for (std::size_t i = 0; i < xs.size() && !failed; ++i) {
      const double vi = nu(xs[i]);
      for (std::size_t j = i + 1; j < xs.size(); ++j) {
        const double gap = std::abs(nu(xs[j]) - vi) - k * std::abs(xs[j] - xs[i]);
        if (gap > 1e-12 * std::max(1.0, std::abs(vi))) {
          rep.failures.push_back({name, xs[i], "pair with " + fmt(xs[j]) + " exceeds k"});
          failed = true;
          break;
        }
      }
    }
  }
  {
    // Elasticity probe on the satisfaction against a reference at 0,
    // shifted so its limit at infinity is 1.
    rep.checks.push_back("asymptotic elasticity");
    const ReferenceDistribution ref = ReferenceDistribution::degenerate(0.0);
    const double top = U.supremum() + nu(U.supremum() - U(0.0));
    const double shift = top - 1.0;
    std::optional<double> threshold;
    for (double y : xs) {
      if (y <= 0.0) continue;
      const auto s = satisfaction_derivatives(U, nu, y, ref);
      const bool holds = y * s.d1 < 0.5 * (s.value - shift);
      if (holds && !threshold) threshold = y;
      if (!holds) threshold.reset();
    }
    rep.elasticity_threshold = threshold;
    if (!threshold)
      rep.failures.push_back({"asymptotic elasticity", xs.back(),
                              "y V'(y) < V(y)/2 does not settle on the probe grid"});
  }
  return rep;
}

std::pair<double, double> fold_hoelder(std::span<const std::pair<double, double>> constants,
                                       double uniform_bound) {
  if (constants.empty()) throw PreferenceError("fold_hoelder needs at least one constant");
  if (!(uniform_bound >= 0.0)) throw PreferenceError("uniform bound must be non-negative");
  double c = 0.0;
  double theta = 1.0;
  for (const auto& [ci, ti] : constants) {
    if (!(ti > 0.0 && ti <= 1.0)) throw PreferenceError("Hoelder exponent outside (0,1]");
    c = std::max(c, ci);
    theta = std::min(theta, ti);
  }
  return {static_cast<double>(constants.size()) * c + 2.0 * uniform_bound, theta};
}

}  // namespace pereq
