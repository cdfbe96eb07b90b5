#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pereq/bestresponse.hpp"

namespace pereq {

struct EquilibriumConfig {
  double damping = 0.5;
  double tolerance = 1e-8;
  int max_iterations = 50;
  /// Number of starts: the zero strategy plus random draws.
  int starts = 8;
  /// Explicit starts; when non-empty they replace the zero + random set.
  std::vector<Strategy> seeds;
  /// Random starts are uniform per node in +-min(K_t(x0), start_radius).
  double start_radius = 10.0;
  std::uint64_t seed = 7;
  int oracle_resolution = 41;
  std::size_t oracle_cap = 5'000'000;
  /// Run starts on up to this many threads (0 = hardware concurrency).
  unsigned threads = 0;

  void validate() const;
};

struct TraceRow {
  int start = 0;
  int iteration = 0;
  double residual = 0.0;
  double value = 0.0;
};

struct EquilibriumReport {
  Strategy strategy;
  double residual = 0.0;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  int start = 0;
  std::vector<TraceRow> trace;
};

struct EquilibriumSet {
  std::vector<EquilibriumReport> reports;
  /// One report per cluster of converged strategies (within 10 tolerance),
  /// the lowest-residual member of each.
  std::vector<std::size_t> distinct;
  /// Highest self-value among the distinct equilibria.
  std::optional<std::size_t> preferred;
};

/// E[satisfaction(W_T(x0, psi), B)] for a strategy psi against a reference law.
double evaluate_value(const Problem& problem, const Strategy& strategy,
                      const ReferenceDistribution& reference);

/// Self-value: the strategy evaluated against its own terminal-wealth law.
double evaluate_self_value(const Problem& problem, const Strategy& strategy);

/// sup-norm distance between psi*(phi) and phi.
double fixed_point_residual(const Problem& problem, const Strategy& strategy,
                            const SolverOptions& options = {});

/// Damped iteration phi <- (1 - lambda) phi + lambda psi*(phi) from one
/// start; returns the lowest-residual iterate seen.
EquilibriumReport iterate_fixed_point(const Problem& problem, const EquilibriumConfig& config,
                                      const Strategy& start, int start_id = 0,
                                      const SolverOptions& options = {});

struct CertificationReport {
  double analytic_residual = 0.0;
  bool analytic_passed = false;
  bool oracle_run = false;
  std::string oracle_notice;
  std::size_t combinations = 0;
  double candidate_value = 0.0;
  double oracle_best_value = 0.0;
  Strategy oracle_best;
  /// oracle_best_value - candidate_value.
  double improvement = 0.0;
  double slack = 0.0;
  double grid_step = 0.0;
  bool oracle_passed = false;
  bool certified() const { return analytic_passed && (!oracle_run || oracle_passed); }
};

/// Analytic fixed-point residual plus, when the grid is small enough, an
/// exhaustive search over positions on +-K_t(x0) per node.
CertificationReport certify_equilibrium(const Problem& problem, const Strategy& candidate,
                                        const EquilibriumConfig& config,
                                        const SolverOptions& options = {});

/// Initial strategies used by find_equilibria.
std::vector<Strategy> multistart_strategies(const Problem& problem, const EquilibriumConfig& config);

/// Clusters converged reports within 10 * tolerance and picks the
/// preferred one.
EquilibriumSet collect_equilibria(std::vector<EquilibriumReport> reports, double tolerance);

EquilibriumSet find_equilibria(const Problem& problem, const EquilibriumConfig& config,
                               const SolverOptions& options = {});

}  // namespace pereq
