#include "pereq/market.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pereq {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

FactorDistribution::FactorDistribution(std::vector<Atom> atoms, double bound)
    : atoms_(std::move(atoms)), bound_(bound) {
  if (atoms_.empty()) throw ModelError("factor distribution has no atoms");
  if (!(bound_ >= 0.0) || !std::isfinite(bound_))
    throw ModelError("factor bound must be finite and non-negative");
  dimension_ = atoms_.front().value.size();
  if (dimension_ == 0) throw ModelError("factor atoms must have dimension >= 1");
  double total = 0.0;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    const Atom& a = atoms_[i];
    if (a.value.size() != dimension_)
      throw ModelError("factor atoms have inconsistent dimensions");
    if (!(a.probability > 0.0 && a.probability <= 1.0))
      throw ModelError("atom " + std::to_string(i) + " has probability outside (0,1]");
    for (double x : a.value)
      if (!std::isfinite(x)) throw ModelError("atom " + std::to_string(i) + " is not finite");
    if (norm(a.value) > bound_)
      throw ModelError("atom " + std::to_string(i) + " exceeds the factor bound");
    total += a.probability;
  }
  if (std::abs(total - 1.0) > kProbabilityTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "factor probabilities sum to " << total << ", not 1";
    throw ModelError(os.str());
  }
}

FactorDistribution FactorDistribution::scalar(std::span<const std::pair<double, double>> atoms,
                                              double bound) {
  std::vector<Atom> out;
  out.reserve(atoms.size());
  for (const auto& [v, p] : atoms) out.push_back(Atom{{v}, p});
  return FactorDistribution(std::move(out), bound);
}

FactorDistribution FactorDistribution::scalar(
    std::initializer_list<std::pair<double, double>> atoms, double bound) {
  return scalar(std::span<const std::pair<double, double>>(atoms.begin(), atoms.size()), bound);
}

ScenarioTree ScenarioTree::build(std::vector<FactorDistribution> distributions) {
  if (distributions.empty()) throw ModelError("scenario tree needs at least one period");
  ScenarioTree tree;
  tree.dimension_ = distributions.front().dimension();
  for (const auto& d : distributions)
    if (d.dimension() != tree.dimension_)
      throw ModelError("factor dimension changes between periods");
  tree.distributions_ = std::move(distributions);

  tree.nodes_.push_back(Node{});
  tree.depth_offsets_ = {0, 1};
  for (int t = 1; t <= tree.horizon(); ++t) {
    const auto& atoms = tree.distribution(t).atoms();
    const NodeId begin = tree.depth_offsets_[static_cast<std::size_t>(t) - 1];
    const NodeId end = tree.depth_offsets_[static_cast<std::size_t>(t)];
    for (NodeId parent = begin; parent < end; ++parent) {
      tree.nodes_[parent].first_child = tree.nodes_.size();
      tree.nodes_[parent].child_count = atoms.size();
      const double base = tree.nodes_[parent].probability;
      for (std::size_t a = 0; a < atoms.size(); ++a) {
        Node n;
        n.id = tree.nodes_.size();
        n.depth = t;
        n.parent = parent;
        n.atom = a;
        n.probability = base * atoms[a].probability;
        tree.nodes_.push_back(n);
      }
    }
    tree.depth_offsets_.push_back(tree.nodes_.size());
  }
  return tree;
}

double ScenarioTree::edge_probability(NodeId child) const {
  const Node& n = node(child);
  if (n.depth == 0) return 1.0;
  return distribution(n.depth).atoms()[n.atom].probability;
}

std::vector<double> ScenarioTree::history(NodeId id) const {
  const Node* n = &node(id);
  std::vector<double> out(static_cast<std::size_t>(n->depth) * dimension_);
  while (n->depth > 0) {
    const auto& v = distribution(n->depth).atoms()[n->atom].value;
    std::copy(v.begin(), v.end(),
              out.begin() + static_cast<std::ptrdiff_t>((n->depth - 1) * dimension_));
    n = &node(n->parent);
  }
  return out;
}

double ScenarioTree::distance(NodeId a, NodeId b) const {
  if (node(a).depth != node(b).depth) throw ModelError("distance between nodes of different depth");
  const auto ha = history(a);
  const auto hb = history(b);
  double s = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) s += (ha[i] - hb[i]) * (ha[i] - hb[i]);
  return std::sqrt(s);
}

std::string ScenarioTree::path_label(NodeId id) const {
  std::vector<std::size_t> atoms;
  for (const Node* n = &node(id); n->depth > 0; n = &node(n->parent)) atoms.push_back(n->atom);
  if (atoms.empty()) return "root";
  std::string out;
  for (auto it = atoms.rbegin(); it != atoms.rend(); ++it) {
    if (!out.empty()) out += '-';
    out += std::to_string(*it);
  }
  return out;
}

namespace {

void validate_price_constants(double C_f, double chi) {
  if (!(C_f > 0.0) || !std::isfinite(C_f)) throw ModelError("C_f must be positive and finite");
  if (!(chi > 0.0 && chi <= 1.0)) throw ModelError("chi must lie in (0,1]");
}

void validate_increments(const ScenarioTree& tree, const std::vector<double>& inc, double C_f) {
  if (inc.size() != tree.size())
    throw ModelError("increment table has " + std::to_string(inc.size()) + " entries, tree has " +
                     std::to_string(tree.size()) + " nodes");
  for (NodeId id = 1; id < inc.size(); ++id) {
    if (!std::isfinite(inc[id]))
      throw ModelError("increment at node " + std::to_string(id) + " is not finite");
    if (std::abs(inc[id]) > C_f)
      throw ModelError("increment at node " + std::to_string(id) + " exceeds C_f");
  }
}

}  // namespace

PriceModel PriceModel::from_table(const ScenarioTree& tree, double S0,
                                  std::vector<double> increments, double C_f, double chi) {
  validate_price_constants(C_f, chi);
  if (!std::isfinite(S0)) throw ModelError("initial price is not finite");
  if (!increments.empty()) increments[0] = 0.0;
  validate_increments(tree, increments, C_f);
  PriceModel m;
  m.increments_ = std::move(increments);
  m.S0_ = S0;
  m.C_f_ = C_f;
  m.chi_ = chi;
  return m;
}

PriceModel PriceModel::from_function(
    const ScenarioTree& tree, double S0,
    const std::function<double(int, std::span<const double>)>& f, double C_f, double chi) {
  std::vector<double> inc(tree.size(), 0.0);
  for (NodeId id = 1; id < tree.size(); ++id) {
    const auto h = tree.history(id);
    inc[id] = f(tree.node(id).depth, h);
  }
  return from_table(tree, S0, std::move(inc), C_f, chi);
}

PriceModel PriceModel::drift_vol_model(const ScenarioTree& tree, double S0,
                                       DriftVolParams params, double C_f, double chi) {
  if (tree.dimension() != 1) throw ModelError("drift-vol prices need a scalar factor");
  const auto T = static_cast<std::size_t>(tree.horizon());
  if (params.mu.size() != T || params.sigma.size() != T)
    throw ModelError("drift-vol model needs one mu and one sigma per period");
  std::vector<double> inc(tree.size(), 0.0);
  for (NodeId id = 1; id < tree.size(); ++id) {
    const Node& n = tree.node(id);
    const auto past = tree.history(n.parent);
    const double e = tree.distribution(n.depth).atoms()[n.atom].value[0];
    const auto t = static_cast<std::size_t>(n.depth) - 1;
    inc[id] = params.mu[t](past) + params.sigma[t](past) * e;
  }
  PriceModel m = from_table(tree, S0, std::move(inc), C_f, chi);
  m.variant_ = PriceVariant::drift_vol;
  m.drift_vol_ = std::move(params);
  return m;
}

double PriceModel::price(const ScenarioTree& tree, NodeId id) const {
  double s = S0_;
  for (const Node* n = &tree.node(id); n->depth > 0; n = &tree.node(n->parent))
    s += increments_.at(n->id);
  return s;
}

double node_alpha(std::span<const double> increments, std::span<const double> probabilities) {
  auto up = [&](double a) {
    double m = 0.0;
    for (std::size_t i = 0; i < increments.size(); ++i)
      if (increments[i] >= a) m += probabilities[i];
    return m;
  };
  auto down = [&](double a) {
    double m = 0.0;
    for (std::size_t i = 0; i < increments.size(); ++i)
      if (increments[i] <= -a) m += probabilities[i];
    return m;
  };
  // Feasible sets {a : up(a) >= a} are down-closed and their suprema are
  // attained at an increment magnitude or a tail mass, so scanning those
  // candidates is exact.
  std::vector<double> candidates{1.0};
  for (double f : increments) {
    candidates.push_back(std::abs(f));
    candidates.push_back(up(std::abs(f)));
    candidates.push_back(down(std::abs(f)));
  }
  double best_up = 0.0;
  double best_down = 0.0;
  for (double a : candidates) {
    if (!(a > 0.0 && a <= 1.0)) continue;
    if (up(a) >= a) best_up = std::max(best_up, a);
    if (down(a) >= a) best_down = std::max(best_down, a);
  }
  return std::min(best_up, best_down);
}

NoArbitrageCertificate check_uniform_no_arbitrage(const ScenarioTree& tree,
                                                  const PriceModel& prices) {
  NoArbitrageCertificate cert;
  cert.node_alpha.assign(tree.nonterminal_count(), 0.0);
  cert.alpha_star = 1.0;
  std::vector<double> inc;
  std::vector<double> prob;
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    const Node& n = tree.node(o);
    inc.clear();
    prob.clear();
    for (std::size_t c = 0; c < n.child_count; ++c) {
      inc.push_back(prices.increment(n.first_child + c));
      prob.push_back(tree.edge_probability(n.first_child + c));
    }
    const double a = node_alpha(inc, prob);
    cert.node_alpha[o] = a;
    if (a < cert.alpha_star) cert.alpha_star = a;
    if (!(a > 0.0) && !cert.violating_node) cert.violating_node = o;
  }
  cert.certified = !cert.violating_node.has_value();
  if (!cert.certified) cert.alpha_star = 0.0;
  return cert;
}

std::pair<PriceModel, NoArbitrageCertificate> build_eex_model(const ScenarioTree& tree,
                                                              double S0, DriftVolParams params,
                                                              std::optional<double> C_f,
                                                              std::optional<double> chi) {
  if (!(params.c > 0.0)) throw ModelError("drift-vol model needs c > 0");
  if (!(params.beta > 0.0 && params.beta <= 1.0)) throw ModelError("beta must lie in (0,1]");
  if (!(params.delta > 0.0 && params.delta <= 1.0)) throw ModelError("delta must lie in (0,1]");
  if (tree.dimension() != 1) throw ModelError("drift-vol prices need a scalar factor");
  const int T = tree.horizon();
  if (params.mu.size() != static_cast<std::size_t>(T) ||
      params.sigma.size() != static_cast<std::size_t>(T))
    throw ModelError("drift-vol model needs one mu and one sigma per period");

  const double threshold = (params.C + params.beta) / params.c;
  double C_eps = 0.0;
  for (int t = 1; t <= T; ++t) {
    const auto& d = tree.distribution(t);
    C_eps = std::max(C_eps, d.bound());
    double lower = 0.0;
    double upper = 0.0;
    for (const Atom& a : d.atoms()) {
      if (a.value[0] <= -threshold) lower += a.probability;
      if (a.value[0] >= threshold) upper += a.probability;
    }
    if (lower < params.beta || upper < params.beta) {
      std::ostringstream os;
      os << "period " << t << " puts mass " << std::min(lower, upper)
         << " beyond +-(C+beta)/c = " << threshold << ", need at least beta = " << params.beta;
      throw CertificationError(os.str(), std::nullopt, t);
    }
  }
  // Coefficient preconditions on every history that enters a computation.
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    const auto past = tree.history(o);
    const auto t = static_cast<std::size_t>(tree.node(o).depth);
    const double mu = params.mu[t](past);
    const double sigma = params.sigma[t](past);
    if (!(sigma >= params.c)) {
      std::ostringstream os;
      os << "sigma_" << t + 1 << " = " << sigma << " < c at node " << o;
      throw CertificationError(os.str(), o, static_cast<int>(t) + 1);
    }
    if (std::abs(mu) + std::abs(sigma) > params.C * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "|mu_" << t + 1 << "| + |sigma_" << t + 1 << "| exceeds C at node " << o;
      throw CertificationError(os.str(), o, static_cast<int>(t) + 1);
    }
  }

  const double cf = C_f.value_or(5.0 * params.C * (1.0 + std::max(C_eps, 1.0)));
  const double ex = chi.value_or(params.delta);
  const double beta = params.beta;
  PriceModel prices = PriceModel::drift_vol_model(tree, S0, std::move(params), cf, ex);

  NoArbitrageCertificate cert = check_uniform_no_arbitrage(tree, prices);
  // The tail-mass condition gives alpha = beta at every node; the per-node
  // scan can only certify a larger value.
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o) {
    if (cert.node_alpha[o] < beta) {
      throw CertificationError("node " + std::to_string(o) + " fails the tail-mass certificate", o,
                               tree.node(o).depth + 1);
    }
  }
  cert.alpha_star = beta;
  cert.certified = true;
  cert.violating_node.reset();
  return {std::move(prices), std::move(cert)};
}

double Strategy::distance(const Strategy& other) const {
  if (other.size() != size()) throw ModelError("strategies cover different node sets");
  double d = 0.0;
  for (std::size_t i = 0; i < size(); ++i) d = std::max(d, std::abs(positions_[i] - other.positions_[i]));
  return d;
}

void require_complete(const ScenarioTree& tree, const Strategy& strategy) {
  if (strategy.size() < tree.nonterminal_count())
    throw ModelError("strategy is missing node " + std::to_string(strategy.size()));
  if (strategy.size() > tree.nonterminal_count())
    throw ModelError("strategy has positions for terminal nodes");
  for (NodeId o = 0; o < tree.nonterminal_count(); ++o)
    if (!std::isfinite(strategy[o]))
      throw ModelError("strategy position at node " + std::to_string(o) + " is not finite");
}

WealthPath wealth(const ScenarioTree& tree, const PriceModel& prices, const Strategy& strategy,
                  double x0) {
  require_complete(tree, strategy);
  WealthPath w;
  w.x0 = x0;
  w.wealth.assign(tree.size(), x0);
  for (NodeId id = 1; id < tree.size(); ++id) {
    const NodeId p = tree.node(id).parent;
    w.wealth[id] = w.wealth[p] + strategy[p] * prices.increment(id);
  }
  return w;
}

Market Market::certify(ScenarioTree tree, PriceModel prices) {
  NoArbitrageCertificate cert = check_uniform_no_arbitrage(tree, prices);
  if (!cert.certified) {
    const NodeId o = *cert.violating_node;
    throw CertificationError("uniform no-arbitrage fails at node " + std::to_string(o) + " (" +
                                 tree.path_label(o) + "): no alpha > 0 has both tail masses",
                             o, tree.node(o).depth + 1);
  }
  return Market{std::move(tree), std::move(prices), std::move(cert)};
}

}  // namespace pereq
