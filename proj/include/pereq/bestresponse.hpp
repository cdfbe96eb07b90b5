#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pereq/envelopes.hpp"
#include "pereq/market.hpp"
#include "pereq/preferences.hpp"

namespace pereq {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Backing { exact, grid };

struct SolverOptions {
  double foc_tolerance = 1e-10;
  int max_iterations = 100;
  Backing backing = Backing::exact;
  std::size_t grid_points = 257;
  /// Grid spans x0 +- T * C_f * grid_position_scale.
  double grid_position_scale = 10.0;
};

/// A certified market with preferences, initial capital and the envelope
/// bounds used to bracket the one-step problems.
struct Problem {
  Market market;
  Preferences preferences;
  double x0 = 0.0;
  std::shared_ptr<const EnvelopeStack> envelopes;

  const ScenarioTree& tree() const { return market.tree; }
  const PriceModel& prices() const { return market.prices; }

  /// Envelopes use the certified alpha* unless a smaller alpha is given,
  /// and the price model's C_f and chi.
  static Problem make(Market market, Preferences preferences, double x0,
                      std::optional<double> alpha = std::nullopt, std::size_t subgrid = 512);
};

struct ValuePoint {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Stage value function V_t(node, x) with its first two x-derivatives.
class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual int stage() const = 0;
  virtual ValuePoint evaluate(NodeId node, double x) const = 0;
};

/// V_T(x) = E[satisfaction(x, B)], independent of the node.
class TerminalValue final : public ValueFunction {
 public:
  TerminalValue(Preferences preferences, ReferenceDistribution reference, int horizon);
  int stage() const override { return horizon_; }
  ValuePoint evaluate(NodeId node, double x) const override;
  const ReferenceDistribution& reference() const { return reference_; }

 private:
  Preferences preferences_;
  ReferenceDistribution reference_;
  int horizon_;
};

std::shared_ptr<const TerminalValue> terminal_value(const Preferences& preferences,
                                                    ReferenceDistribution reference, int horizon);

/// Sums over the children of a node at position h.
struct OneStepTerms {
  double gamma_big = 0.0;  // sum p V
  double gamma = 0.0;      // sum p V' f
  double d_h = 0.0;        // sum p V'' f^2
  double d_x = 0.0;        // sum p V'' f
  double v1 = 0.0;         // sum p V'
  double v2 = 0.0;         // sum p V''
};

OneStepTerms one_step_terms(const ValueFunction& next, const ScenarioTree& tree,
                            const PriceModel& prices, NodeId node, double x, double h);

double gamma_big(const ValueFunction& next, const ScenarioTree& tree, const PriceModel& prices,
                 NodeId node, double x, double h);
double gamma_small(const ValueFunction& next, const ScenarioTree& tree, const PriceModel& prices,
                   NodeId node, double x, double h);

struct OneStepSolution {
  double position = 0.0;
  double residual = 0.0;
  double bracket = 0.0;  // K(x); the search interval is [-bracket, bracket]
  int iterations = 0;
  /// gamma kept one sign on the bracket and the endpoint was returned.
  bool clamped = false;
  OneStepTerms terms;    // at the returned position
};

/// Root of h -> gamma(node, x, h) on [-K(x), K(x)] by safeguarded Newton.
OneStepSolution solve_one_step(const ValueFunction& next, const ScenarioTree& tree,
                               const PriceModel& prices, NodeId node, double x,
                               const EnvelopeStage& envelopes, const SolverOptions& options = {});

/// Stage t < T value by exact recursion against the stage t+1 evaluator.
class RecursiveValue final : public ValueFunction {
 public:
  RecursiveValue(std::shared_ptr<const ValueFunction> next, const Problem& problem, int stage,
                 SolverOptions options);
  int stage() const override { return stage_; }
  ValuePoint evaluate(NodeId node, double x) const override;
  OneStepSolution solve(NodeId node, double x) const;
  const ValueFunction& next() const { return *next_; }

 private:
  struct Entry {
    OneStepSolution solution;
    ValuePoint point;
  };
  const Entry& lookup(NodeId node, double x) const;

  std::shared_ptr<const ValueFunction> next_;
  const Problem* problem_;
  int stage_;
  SolverOptions options_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<NodeId, std::unordered_map<double, Entry>> cache_;
};

/// Per-node wealth grid over an exact evaluator: value by monotone cubic
/// Hermite on (v, v'), v' by cubic Hermite on (v', v''), v'' linear.
/// Points off the grid use the exact evaluator.
class GridValue final : public ValueFunction {
 public:
  GridValue(std::shared_ptr<const RecursiveValue> exact, const ScenarioTree& tree, double lo,
            double hi, std::size_t points);
  int stage() const override { return exact_->stage(); }
  ValuePoint evaluate(NodeId node, double x) const override;

 private:
  struct Table {
    std::vector<double> v, d1, d2;
  };
  const Table& table(NodeId node) const;

  std::shared_ptr<const RecursiveValue> exact_;
  NodeId first_;
  double lo_, hi_;
  std::size_t points_;
  mutable std::vector<Table> tables_;
  std::unique_ptr<std::once_flag[]> once_;
};

/// Value functions for all stages against one reference distribution.
class ValueRecursion {
 public:
  ValueRecursion(const Problem& problem, std::shared_ptr<const TerminalValue> terminal,
                 const SolverOptions& options);
  /// Evaluator used for stage t (grid-backed when enabled).
  const ValueFunction& stage(int t) const { return *stages_.at(static_cast<std::size_t>(t)); }
  /// Exact one-step solver for stage t < T.
  const RecursiveValue& solver(int t) const { return *solvers_.at(static_cast<std::size_t>(t)); }
  const ReferenceDistribution& reference() const { return terminal_->reference(); }

 private:
  std::shared_ptr<const TerminalValue> terminal_;
  std::vector<std::shared_ptr<const ValueFunction>> stages_;
  std::vector<std::shared_ptr<const RecursiveValue>> solvers_;
};

std::unique_ptr<ValueRecursion> value_recursion(const Problem& problem,
                                                const ReferenceDistribution& reference,
                                                const SolverOptions& options = {});

struct BestResponse {
  Strategy strategy;
  ReferenceDistribution reference;
  double value = 0.0;                     // V_0(root, x0)
  std::vector<double> wealth;             // along the optimal strategy
  std::vector<OneStepSolution> solutions; // per non-terminal node
};

/// Law of the terminal wealth of a strategy, equal wealths merged.
ReferenceDistribution reference_distribution(const ScenarioTree& tree, const PriceModel& prices,
                                             const Strategy& strategy, double x0);

BestResponse best_response(const Problem& problem, const Strategy& reference_strategy,
                           const SolverOptions& options = {});

/// Best response to a given reference law (no strategy needed).
BestResponse best_response_to(const Problem& problem, const ReferenceDistribution& reference,
                              const SolverOptions& options = {});

}  // namespace pereq
