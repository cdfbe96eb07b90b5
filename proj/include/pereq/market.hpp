#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pereq {

/// Absolute tolerance for probability normalization.
inline constexpr double kProbabilityTolerance = 1e-12;

/// Invalid market input (bad probabilities, bounds, missing nodes).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Atom {
  std::vector<double> value;
  double probability = 0.0;
};

/// Finite-support law of one period's factor.
///
/// Single-atom laws are accepted here; they cannot satisfy the
/// no-arbitrage condition and are rejected by check_uniform_no_arbitrage.
class FactorDistribution {
 public:
  FactorDistribution(std::vector<Atom> atoms, double bound);

  /// Scalar factor convenience: atoms given as (value, probability).
  static FactorDistribution scalar(std::span<const std::pair<double, double>> atoms,
                                   double bound);
  static FactorDistribution scalar(std::initializer_list<std::pair<double, double>> atoms,
                                   double bound);

  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  std::size_t dimension() const { return dimension_; }
  double bound() const { return bound_; }

 private:
  std::vector<Atom> atoms_;
  std::size_t dimension_ = 0;
  double bound_ = 0.0;
};

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

struct Node {
  NodeId id = 0;
  int depth = 0;
  NodeId parent = kNoNode;
  std::size_t atom = 0;        // index of the atom on the edge from the parent
  double probability = 1.0;    // path probability
  NodeId first_child = kNoNode;
  std::size_t child_count = 0;
};

/// The product tree of factor histories. Nodes are stored breadth-first:
/// each depth occupies a contiguous id range and siblings are contiguous
/// in atom order.
class ScenarioTree {
 public:
  static ScenarioTree build(std::vector<FactorDistribution> distributions);

  int horizon() const { return static_cast<int>(distributions_.size()); }
  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// First id at depth t; depth_begin(T + 1) == size().
  NodeId depth_begin(int t) const { return depth_offsets_.at(static_cast<std::size_t>(t)); }
  NodeId depth_end(int t) const { return depth_offsets_.at(static_cast<std::size_t>(t) + 1); }
  std::size_t nonterminal_count() const { return depth_begin(horizon()); }
  bool terminal(NodeId id) const { return node(id).depth == horizon(); }

  /// Law of the factor entering at period t (1-based, t = 1..T).
  const FactorDistribution& distribution(int t) const {
    return distributions_.at(static_cast<std::size_t>(t) - 1);
  }
  const std::vector<FactorDistribution>& distributions() const { return distributions_; }

  /// Conditional probability of the edge into `child`.
  double edge_probability(NodeId child) const;

  /// Concatenated factor history e^t of a node (length depth * dimension).
  std::vector<double> history(NodeId id) const;

  /// Euclidean distance between the histories of two same-depth nodes.
  double distance(NodeId a, NodeId b) const;

  /// Atom indices along the path, joined with '-' ("root" for the root).
  std::string path_label(NodeId id) const;

 private:
  std::vector<FactorDistribution> distributions_;
  std::vector<Node> nodes_;
  std::vector<NodeId> depth_offsets_;
  std::size_t dimension_ = 0;
};

inline ScenarioTree build_tree(std::vector<FactorDistribution> distributions) {
  return ScenarioTree::build(std::move(distributions));
}

enum class PriceVariant { table, drift_vol };

/// History-dependent coefficient, evaluated on e^{t-1}.
using HistoryFunction = std::function<double(std::span<const double>)>;

struct DriftVolParams {
  std::vector<HistoryFunction> mu;     // mu[t-1] is mu_t
  std::vector<HistoryFunction> sigma;  // sigma[t-1] is sigma_t
  double delta = 1.0;
  double C = 1.0;
  double c = 1.0;
  double beta = 0.0;
};

/// Price increments f_t stored per node (entry for node o is the increment
/// on the edge into o; the root entry is 0).
class PriceModel {
 public:
  static PriceModel from_table(const ScenarioTree& tree, double S0,
                               std::vector<double> increments, double C_f, double chi);

  /// f_t(e^t) evaluated on every node from a function of (t, history).
  static PriceModel from_function(
      const ScenarioTree& tree, double S0,
      const std::function<double(int, std::span<const double>)>& f, double C_f,
      double chi);

  /// Drift-vol variant: f_t = mu_t(e^{t-1}) + sigma_t(e^{t-1}) e_t on every
  /// node. Scalar factors only.
  static PriceModel drift_vol_model(const ScenarioTree& tree, double S0,
                                    DriftVolParams params, double C_f, double chi);

  double increment(NodeId child) const { return increments_.at(child); }
  const std::vector<double>& increments() const { return increments_; }
  double initial_price() const { return S0_; }
  double bound() const { return C_f_; }
  double exponent() const { return chi_; }
  PriceVariant variant() const { return variant_; }
  const std::optional<DriftVolParams>& drift_vol() const { return drift_vol_; }

  /// Price S_t at a node.
  double price(const ScenarioTree& tree, NodeId id) const;

 private:
  std::vector<double> increments_;
  double S0_ = 0.0;
  double C_f_ = 1.0;
  double chi_ = 1.0;
  PriceVariant variant_ = PriceVariant::table;
  std::optional<DriftVolParams> drift_vol_;
};

struct NoArbitrageCertificate {
  double alpha_star = 0.0;
  /// Per non-terminal node (indexed by node id).
  std::vector<double> node_alpha;
  bool certified = false;
  std::optional<NodeId> violating_node;
};

/// Largest a <= 1 with P[f >= a] >= a and P[f <= -a] >= a for one
/// conditional increment law; 0 when no positive a exists.
double node_alpha(std::span<const double> increments, std::span<const double> probabilities);

NoArbitrageCertificate check_uniform_no_arbitrage(const ScenarioTree& tree,
                                                  const PriceModel& prices);

/// Thrown by build_eex_model when a period fails the tail-mass condition.
class CertificationError : public ModelError {
 public:
  CertificationError(const std::string& what, std::optional<NodeId> node = std::nullopt,
                     int period = 0)
      : ModelError(what), node_(node), period_(period) {}
  std::optional<NodeId> node() const { return node_; }
  int period() const { return period_; }

 private:
  std::optional<NodeId> node_;
  int period_;
};

/// Drift-volatility increments mu_t(e^{t-1}) + sigma_t(e^{t-1}) e_t with a
/// certificate at alpha = beta. C_f defaults to 5C(1 + max(C_eps, 1)) and
/// chi to delta.
std::pair<PriceModel, NoArbitrageCertificate> build_eex_model(
    const ScenarioTree& tree, double S0, DriftVolParams params,
    std::optional<double> C_f = std::nullopt, std::optional<double> chi = std::nullopt);

/// Positions indexed by non-terminal node id.
class Strategy {
 public:
  Strategy() = default;
  explicit Strategy(std::vector<double> positions) : positions_(std::move(positions)) {}

  static Strategy constant(const ScenarioTree& tree, double h) {
    return Strategy(std::vector<double>(tree.nonterminal_count(), h));
  }

  double operator[](NodeId id) const { return positions_.at(id); }
  double& operator[](NodeId id) { return positions_.at(id); }
  std::size_t size() const { return positions_.size(); }
  const std::vector<double>& positions() const { return positions_; }

  /// Sup-norm distance over nodes.
  double distance(const Strategy& other) const;

  bool operator==(const Strategy&) const = default;

 private:
  std::vector<double> positions_;
};

/// Throws ModelError unless the strategy covers every non-terminal node
/// with finite positions.
void require_complete(const ScenarioTree& tree, const Strategy& strategy);

struct WealthPath {
  double x0 = 0.0;
  std::vector<double> wealth;  // per node
};

WealthPath wealth(const ScenarioTree& tree, const PriceModel& prices,
                  const Strategy& strategy, double x0);

/// A certified market: tree, prices and certificate together.
struct Market {
  ScenarioTree tree;
  PriceModel prices;
  NoArbitrageCertificate certificate;

  /// Runs certification; throws CertificationError naming the node when
  /// the model is not uniformly arbitrage-free.
  static Market certify(ScenarioTree tree, PriceModel prices);
};

}  // namespace pereq
