#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pereq/preferences.hpp"

namespace pereq {

/// Envelope arithmetic runs in long double: the bounds compound across
/// stages and leave double range quickly.
using Bound = long double;

class EnvelopeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Interval {
  Bound lo = 0;
  Bound hi = 0;
};

/// Bounds on the stage-t value function and, for t < T, on the one-step
/// problem solved at stage t. Functions of wealth x are evaluated lazily
/// and memoized per x; instances are shared read-only across threads.
class EnvelopeStage {
 public:
  /// Stage-T bounds from the satisfaction functional.
  EnvelopeStage(const Utility& U, const GainLoss& nu, double chi, int horizon);
  /// Stage t = next.stage() - 1.
  EnvelopeStage(std::shared_ptr<const EnvelopeStage> next, double alpha, double C_f,
                std::size_t subgrid);

  int stage() const { return stage_; }
  bool terminal() const { return next_ == nullptr; }
  /// Hoelder exponent of the stage value function in the past.
  double theta() const { return theta_; }
  double alpha() const { return alpha_; }
  double C_f() const { return C_f_; }

  // Value-function bounds (i_V ... L_V at T, i_v ... L_v before).
  Bound i(double x) const;
  Bound j(double x) const;
  Bound J(double x) const;
  /// Throws EnvelopeError when the lower curvature bound is not positive.
  Bound ell(double x) const;
  Bound L(double x) const;
  /// Hoelder constant in the past of the stage value (0 at T).
  Bound C_V(double x) const;

  // One-step quantities; only for non-terminal stages.
  Bound K(double x) const;
  Interval D(double x) const;
  Bound A(double x) const;
  Bound C_h(double x) const;

 private:
  struct CurvatureScan {
    Bound ell_inf = 0;
    Bound L_sup = 0;
  };
  struct HoelderScan {
    Bound C_V_sup = 0;
    Bound J_sup = 0;
    Bound abs_i_sup = 0;
  };
  using Memo = std::unordered_map<double, Bound>;

  Bound memo(Memo& m, double x, Bound (EnvelopeStage::*compute)(double) const) const;
  CurvatureScan curvature_scan(double x) const;
  HoelderScan hoelder_scan(double x) const;
  /// Both scans in one pass when the next stage is terminal.
  void terminal_scans(double x) const;
  void require_next(const char* what) const;

  Bound compute_K(double x) const;
  Bound compute_ell(double x) const;
  Bound compute_L(double x) const;
  Bound compute_A(double x) const;
  Bound compute_C_h(double x) const;
  Bound compute_C_V(double x) const;

  // Terminal data.
  std::shared_ptr<const Utility> U_;
  std::shared_ptr<const GainLoss> nu_;
  double k_ = 0.0;
  double C_U_ = 0.0;
  double C_nu_ = 0.0;
  // Propagated data.
  std::shared_ptr<const EnvelopeStage> next_;
  double alpha_ = 0.0;
  double C_f_ = 0.0;
  std::size_t subgrid_ = 512;
  int stage_ = 0;
  double theta_ = 1.0;

  mutable std::mutex mutex_;
  mutable Memo K_, ell_, L_, A_, C_h_, C_V_;
  mutable std::unordered_map<double, CurvatureScan> curvature_;
  mutable std::unordered_map<double, HoelderScan> hoelder_;
};

std::shared_ptr<const EnvelopeStage> terminal_envelopes(const Utility& U, const GainLoss& nu,
                                                        double chi, int horizon);

std::shared_ptr<const EnvelopeStage> propagate_envelopes(std::shared_ptr<const EnvelopeStage> prev,
                                                         double alpha, double C_f,
                                                         std::size_t subgrid = 512);

/// All stages 0..T for one model.
class EnvelopeStack {
 public:
  EnvelopeStack(const Preferences& prefs, double alpha, double C_f, double chi, int horizon,
                std::size_t subgrid = 512);
  const EnvelopeStage& stage(int t) const { return *stages_.at(static_cast<std::size_t>(t)); }
  int horizon() const { return static_cast<int>(stages_.size()) - 1; }
  double alpha() const { return alpha_; }
  double C_f() const { return C_f_; }
  double chi() const { return chi_; }

 private:
  std::vector<std::shared_ptr<const EnvelopeStage>> stages_;
  double alpha_, C_f_, chi_;
};

struct EnvelopeRow {
  int stage = 0;
  double x = 0.0;
  Bound K = 0, j = 0, J = 0, ell = 0, L = 0, C_h = 0, C_v = 0;
};

/// Tabulates the non-terminal stages on a wealth grid. Throws
/// EnvelopeError when some lower curvature bound is not positive.
std::vector<EnvelopeRow> tabulate(const EnvelopeStack& stack, std::span<const double> x_grid);

/// Bound on positions reachable from x0: max over stages of C_h at
/// wealths within x0 +- t C_f (sum of earlier bounds), accumulated forward.
Bound strategy_bound(const EnvelopeStack& stack, double x0);

}  // namespace pereq
