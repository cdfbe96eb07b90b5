#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pereq/equilibrium.hpp"
#include "pereq/verify.hpp"

namespace pereq {

/// Malformed or inconsistent configuration text.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration file unreadable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  RunConfig(Market m, Preferences p) : market(std::move(m)), preferences(std::move(p)) {}

  Market market;
  Preferences preferences;
  double x0 = 0.0;
  std::optional<double> alpha;
  std::size_t subgrid = 512;
  ProbeGrid probe;
  EquilibriumConfig equilibrium;
  SolverOptions solver;
  VerifyOptions verify;
  std::string output_dir = "out";
  bool trace = false;
  std::uint64_t seed = 7;
  int verbosity = 0;

  /// Propagates the seed, probe grid and solver settings into the nested
  /// option structs.
  void sync();
  Problem problem() const;
};

/// Parses and builds the model. Throws ConfigError for malformed input,
/// CertificationError when the market fails certification and
/// PreferenceError when the preference parameters are rejected.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace pereq
