#include "pereq/envelopes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pereq {

namespace {

constexpr Bound kInf = std::numeric_limits<Bound>::infinity();

bool representable(Bound v) {
  return std::isfinite(v) && std::abs(v) <= static_cast<Bound>(std::numeric_limits<double>::max());
}

std::string show(Bound v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

EnvelopeStage::EnvelopeStage(const Utility& U, const GainLoss& nu, double chi, int horizon)
    : U_(std::make_shared<const Utility>(U)),
      nu_(std::make_shared<const GainLoss>(nu)),
      k_(nu.loss_slope()),
      C_U_(U.upper_bound()),
      C_nu_(nu.bound()),
      stage_(horizon),
      theta_(chi) {
  if (!(chi > 0.0 && chi <= 1.0)) throw EnvelopeError("chi must lie in (0,1]");
  if (horizon < 1) throw EnvelopeError("horizon must be at least 1");
}

EnvelopeStage::EnvelopeStage(std::shared_ptr<const EnvelopeStage> next, double alpha, double C_f,
                             std::size_t subgrid)
    : next_(std::move(next)), alpha_(alpha), C_f_(C_f), subgrid_(subgrid) {
  if (!next_) throw EnvelopeError("propagation needs a later stage");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw EnvelopeError("alpha must lie in (0,1]");
  if (!(C_f > 0.0)) throw EnvelopeError("C_f must be positive");
  if (subgrid_ < 2) throw EnvelopeError("sub-grid needs at least 2 points");
  U_ = next_->U_;
  nu_ = next_->nu_;
  k_ = next_->k_;
  C_U_ = next_->C_U_;
  C_nu_ = next_->C_nu_;
  stage_ = next_->stage_ - 1;
  theta_ = next_->theta_ / 2.0;
  if (stage_ < 0) throw EnvelopeError("propagated past stage 0");
}

void EnvelopeStage::require_next(const char* what) const {
  if (!next_) throw EnvelopeError(std::string(what) + " is undefined at the terminal stage");
}

Bound EnvelopeStage::memo(Memo& m, double x, Bound (EnvelopeStage::*compute)(double) const) const {
  if (std::isnan(x)) throw EnvelopeError("envelope evaluated at NaN");
  {
    std::lock_guard lock(mutex_);
    auto it = m.find(x);
    if (it != m.end()) return it->second;
  }
  const Bound v = (this->*compute)(x);
  std::lock_guard lock(mutex_);
  m.emplace(x, v);
  return v;
}

Bound EnvelopeStage::i(double x) const {
  if (next_) return next_->i(x);
  return (1.0L + k_) * static_cast<Bound>((*U_)(x)) - static_cast<Bound>(k_) * C_U_;
}

Bound EnvelopeStage::j(double x) const {
  if (!next_) return U_->derivative(x);
  const Bound y = static_cast<Bound>(x) + K(x) * C_f_;
  if (!representable(y)) return 0;
  return next_->j(static_cast<double>(y));
}

Bound EnvelopeStage::J(double x) const {
  if (!next_) return (1.0L + k_) * static_cast<Bound>(U_->derivative(x));
  const Bound y = static_cast<Bound>(x) - K(x) * C_f_;
  if (!representable(y)) return kInf;
  return next_->J(static_cast<double>(y));
}

Bound EnvelopeStage::ell(double x) const {
  if (!next_) return -static_cast<Bound>(U_->second_derivative(x));
  return memo(ell_, x, &EnvelopeStage::compute_ell);
}

Bound EnvelopeStage::L(double x) const {
  if (!next_) {
    const Bound u1 = U_->derivative(x);
    return -(1.0L + k_) * static_cast<Bound>(U_->second_derivative(x)) + C_nu_ * u1 * u1;
  }
  return memo(L_, x, &EnvelopeStage::compute_L);
}

Bound EnvelopeStage::C_V(double x) const {
  if (!next_) return 0;
  return memo(C_V_, x, &EnvelopeStage::compute_C_V);
}

Bound EnvelopeStage::K(double x) const {
  require_next("K");
  return memo(K_, x, &EnvelopeStage::compute_K);
}

Interval EnvelopeStage::D(double x) const {
  const Bound r = K(x) * C_f_;
  return {static_cast<Bound>(x) - r, static_cast<Bound>(x) + r};
}

Bound EnvelopeStage::A(double x) const {
  require_next("A");
  return memo(A_, x, &EnvelopeStage::compute_A);
}

Bound EnvelopeStage::C_h(double x) const {
  require_next("C_h");
  return memo(C_h_, x, &EnvelopeStage::compute_C_h);
}

Bound EnvelopeStage::compute_K(double x) const {
  const Bound ax = std::abs(static_cast<Bound>(x));
  const Bound j0 = next_->j(0.0);
  const Bound a = alpha_;
  if (!(j0 > 0)) return kInf;
  return ax / a + (2.0L * (C_U_ + C_nu_) + std::abs(next_->i(x)) + j0 * a * ax) / (j0 * a * a);
}

void EnvelopeStage::terminal_scans(double x) const {
  CurvatureScan c;
  HoelderScan h;
  const Interval d = D(x);
  if (!representable(d.lo) || !representable(d.hi)) {
    c.L_sup = kInf;
    h.C_V_sup = kInf;
    h.J_sup = kInf;
    h.abs_i_sup = kInf;
  } else {
    // Plain double arithmetic: terminal quantities are built from U, U',
    // U'' which are doubles already.
    const double k = k_, C_nu = C_nu_, C_U = C_U_;
    double ell_inf = std::numeric_limits<double>::infinity();
    double L_sup = 0.0, J_sup = 0.0, i_sup = 0.0;
    const double lo = static_cast<double>(d.lo);
    const double step = static_cast<double>((d.hi - d.lo) / static_cast<Bound>(subgrid_ - 1));
    for (std::size_t n = 0; n < subgrid_; ++n) {
      const Jet u = U_->jet(lo + step * static_cast<double>(n));
      ell_inf = std::min(ell_inf, -u.d2);
      L_sup = std::max(L_sup, -(1.0 + k) * u.d2 + C_nu * u.d1 * u.d1);
      J_sup = std::max(J_sup, (1.0 + k) * u.d1);
      i_sup = std::max(i_sup, std::abs((1.0 + k) * u.value - k * C_U));
    }
    c.ell_inf = ell_inf;
    c.L_sup = L_sup;
    h.J_sup = J_sup;
    h.abs_i_sup = i_sup;
  }
  std::lock_guard lock(mutex_);
  curvature_.emplace(x, c);
  hoelder_.emplace(x, h);
}

EnvelopeStage::CurvatureScan EnvelopeStage::curvature_scan(double x) const {
  for (int pass = 0;; ++pass) {
    {
      std::lock_guard lock(mutex_);
      auto it = curvature_.find(x);
      if (it != curvature_.end()) return it->second;
    }
    if (pass > 0 || !next_->terminal()) break;
    terminal_scans(x);
  }
  CurvatureScan s;
  const Interval d = D(x);
  if (!representable(d.lo) || !representable(d.hi)) {
    s.ell_inf = 0;
    s.L_sup = kInf;
  } else {
    s.ell_inf = kInf;
    for (std::size_t k = 0; k < subgrid_; ++k) {
      const Bound y = d.lo + (d.hi - d.lo) * static_cast<Bound>(k) / static_cast<Bound>(subgrid_ - 1);
      const double yd = static_cast<double>(y);
      s.ell_inf = std::min(s.ell_inf, next_->ell(yd));
      s.L_sup = std::max(s.L_sup, next_->L(yd));
    }
  }
  std::lock_guard lock(mutex_);
  curvature_.emplace(x, s);
  return s;
}

EnvelopeStage::HoelderScan EnvelopeStage::hoelder_scan(double x) const {
  for (int pass = 0;; ++pass) {
    {
      std::lock_guard lock(mutex_);
      auto it = hoelder_.find(x);
      if (it != hoelder_.end()) return it->second;
    }
    if (pass > 0 || !next_->terminal()) break;
    terminal_scans(x);
  }
  HoelderScan s;
  const Interval d = D(x);
  if (!representable(d.lo) || !representable(d.hi)) {
    s.C_V_sup = kInf;
    s.J_sup = kInf;
    s.abs_i_sup = kInf;
  } else {
    for (std::size_t k = 0; k < subgrid_; ++k) {
      const Bound y = d.lo + (d.hi - d.lo) * static_cast<Bound>(k) / static_cast<Bound>(subgrid_ - 1);
      const double yd = static_cast<double>(y);
      s.C_V_sup = std::max(s.C_V_sup, next_->C_V(yd));
      s.J_sup = std::max(s.J_sup, next_->J(yd));
      s.abs_i_sup = std::max(s.abs_i_sup, std::abs(next_->i(yd)));
    }
  }
  std::lock_guard lock(mutex_);
  hoelder_.emplace(x, s);
  return s;
}

Bound EnvelopeStage::compute_ell(double x) const {
  const Bound a = alpha_;
  const Bound v = a * a * a / (static_cast<Bound>(C_f_) * C_f_) * curvature_scan(x).ell_inf;
  if (!(v > 0)) {
    throw EnvelopeError("lower curvature bound l_v(" + show(x) + ") = " + show(v) + " at stage " +
                        std::to_string(stage_) + " is not positive");
  }
  return v;
}

Bound EnvelopeStage::compute_L(double x) const {
  const Bound s = curvature_scan(x).L_sup;
  return s * (1.0L + s / ell(x));
}

Bound EnvelopeStage::compute_A(double x) const {
  const HoelderScan s = hoelder_scan(x);
  return 2.0L * (s.C_V_sup + s.J_sup * K(x) * C_f_) + 2.0L * (C_U_ + C_nu_ + s.abs_i_sup);
}

Bound EnvelopeStage::compute_C_h(double x) const {
  return K(x) + (2.0L / C_f_) * std::sqrt(A(x) / ell(x));
}

Bound EnvelopeStage::compute_C_V(double x) const {
  const HoelderScan s = hoelder_scan(x);
  return 3.0L * (s.C_V_sup + s.J_sup * C_f_ * (K(x) + C_h(x))) +
         2.0L * (C_U_ + C_nu_ + std::abs(i(x)));
}

std::shared_ptr<const EnvelopeStage> terminal_envelopes(const Utility& U, const GainLoss& nu,
                                                        double chi, int horizon) {
  return std::make_shared<const EnvelopeStage>(U, nu, chi, horizon);
}

std::shared_ptr<const EnvelopeStage> propagate_envelopes(std::shared_ptr<const EnvelopeStage> prev,
                                                         double alpha, double C_f,
                                                         std::size_t subgrid) {
  return std::make_shared<const EnvelopeStage>(std::move(prev), alpha, C_f, subgrid);
}

EnvelopeStack::EnvelopeStack(const Preferences& prefs, double alpha, double C_f, double chi,
                             int horizon, std::size_t subgrid)
    : alpha_(alpha), C_f_(C_f), chi_(chi) {
  stages_.resize(static_cast<std::size_t>(horizon) + 1);
  stages_.back() = terminal_envelopes(prefs.utility, prefs.gain_loss, chi, horizon);
  for (int t = horizon - 1; t >= 0; --t) {
    const auto idx = static_cast<std::size_t>(t);
    stages_[idx] = propagate_envelopes(stages_[idx + 1], alpha, C_f, subgrid);
  }
}

std::vector<EnvelopeRow> tabulate(const EnvelopeStack& stack, std::span<const double> x_grid) {
  if (x_grid.empty()) throw EnvelopeError("envelope grid is empty");
  std::vector<EnvelopeRow> rows;
  for (int t = stack.horizon() - 1; t >= 0; --t) {
    const EnvelopeStage& s = stack.stage(t);
    for (double x : x_grid) {
      EnvelopeRow r;
      r.stage = t;
      r.x = x;
      r.K = s.K(x);
      r.j = s.j(x);
      r.J = s.J(x);
      r.ell = s.ell(x);
      r.L = s.L(x);
      r.C_h = s.C_h(x);
      r.C_v = s.C_V(x);
      rows.push_back(r);
    }
  }
  return rows;
}

Bound strategy_bound(const EnvelopeStack& stack, double x0) {
  // Positions at depth t are bounded by the sup of C_h over the wealths
  // reachable with the earlier bounds.
  Bound total = 0;
  Bound best = 0;
  const std::size_t n = 512;
  for (int t = 0; t < stack.horizon(); ++t) {
    const EnvelopeStage& s = stack.stage(t);
    Bound c = 0;
    if (t == 0) {
      c = s.C_h(x0);
    } else {
      const Bound r = total * stack.C_f();
      const Bound lo = x0 - r;
      const Bound hi = x0 + r;
      if (!representable(lo) || !representable(hi)) return kInf;
      for (std::size_t k = 0; k < n; ++k) {
        const Bound y = lo + (hi - lo) * static_cast<Bound>(k) / static_cast<Bound>(n - 1);
        c = std::max(c, s.C_h(static_cast<double>(y)));
      }
    }
    total += c;
    best = std::max(best, c);
    if (!std::isfinite(best)) return kInf;
  }
  return best;
}

}  // namespace pereq
