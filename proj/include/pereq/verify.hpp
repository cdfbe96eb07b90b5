#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pereq/equilibrium.hpp"

namespace pereq {

enum class Suite { all, foc, bounds, hoelder, continuity };

std::optional<Suite> parse_suite(std::string_view name);
std::string_view suite_name(Suite suite);

struct CheckReport {
  std::string name;
  std::size_t instances = 0;
  /// Smallest margin seen; positive means satisfied with slack.
  double worst_margin = 0.0;
  /// Instance that produced the worst margin (or why nothing was tested).
  std::string witness;
  /// Allowed negative margin; zero for exact inequalities.
  double tolerance = 0.0;

  bool passed() const { return worst_margin >= -tolerance; }
};

struct CheckInfo {
  std::string name;
  Suite suite;
  double tolerance;
  /// Named module invariants this check is responsible for.
  std::vector<std::string> invariants;
};

/// Every check run_suite knows about, sorted by name.
const std::vector<CheckInfo>& check_catalog();

struct VerifyOptions {
  /// (node, x, reference) tuples per sampled check, and random pairs per
  /// depth for the extension check.
  std::size_t samples = 1000;
  std::uint64_t seed = 7;
  /// Wealth samples lie in x0 +- T * C_f * position_scale; random reference
  /// strategies and sampled positions h stay within +-position_scale and
  /// +-10 * position_scale respectively (and within K).
  double position_scale = 1.0;
  /// The zero strategy plus references - 1 random smooth strategies.
  int references = 3;
  ProbeGrid probe;
  EquilibriumConfig equilibrium;
  SolverOptions solver;
  /// Grid per node for the dominance check; skipped when the number of
  /// combinations exceeds the cap even at 3 positions per node.
  int dominance_resolution = 21;
  std::size_t dominance_cap = 200'000;
};

/// Runs the selected checks. Failures are reported, never thrown; results
/// are sorted by check name and depend only on the inputs and the seed.
std::vector<CheckReport> run_suite(const Problem& problem, Suite suite,
                                   const VerifyOptions& options = {});

bool all_passed(const std::vector<CheckReport>& reports);

}  // namespace pereq
