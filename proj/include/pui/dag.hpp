#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pui/error.hpp"
#include "pui/timeline.hpp"

namespace pui {

enum class NodeKind { intervention, mediator, outcome };

inline std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::intervention: return "intervention";
    case NodeKind::mediator: return "mediator";
    default: return "outcome";
  }
}

inline NodeKind parse_node_kind(const std::string& s) {
  if (s == "intervention") return NodeKind::intervention;
  if (s == "mediator") return NodeKind::mediator;
  if (s == "outcome") return NodeKind::outcome;
  throw InvalidSpecError("unknown node kind '" + s + "'");
}

struct DagNode {
  std::string name;
  NodeKind kind = NodeKind::mediator;
};

/// Per-unit linear effect of `from` on `to`. Mediator -> mediator edges are
/// in target units per source unit, edges into the outcome are on the log
/// scale, intervention -> mediator edges are the shift the intervention
/// causes. An empty effect is unknown and must be resolved.
struct DagEdge {
  std::string from;
  std::string to;
  std::optional<double> effect;

  std::string label() const { return from + "->" + to; }
};

struct KnownTotal {
  std::string intervention;
  double total = 0.0;
};

/// Direct mediator shifts plus an optional effect that bypasses the
/// mediators entirely.
struct InterventionSpec {
  std::string name;
  std::map<std::string, double> deltas;
  double direct_outcome_effect = 0.0;
};

/// Acyclic graph with exactly one outcome node. Interventions have no
/// parents and the outcome has no children.
class CausalDag {
 public:
  CausalDag() = default;
  CausalDag(std::vector<DagNode> nodes, std::vector<DagEdge> edges, std::vector<KnownTotal> knowns = {})
      : nodes_(std::move(nodes)), edges_(std::move(edges)), knowns_(std::move(knowns)) {
    validate();
  }

  const std::vector<DagNode>& nodes() const { return nodes_; }
  const std::vector<DagEdge>& edges() const { return edges_; }
  const std::vector<KnownTotal>& knowns() const { return knowns_; }
  /// Node indices, parents before children.
  const std::vector<std::size_t>& topological_order() const { return order_; }
  const std::string& outcome() const { return nodes_[outcome_].name; }

  bool has_node(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidSpecError("unknown DAG node '" + name + "'");
    return it->second;
  }

  NodeKind kind(const std::string& name) const { return nodes_[index(name)].kind; }

  std::vector<std::string> names_of(NodeKind k) const {
    std::vector<std::string> out;
    for (std::size_t i : order_)
      if (nodes_[i].kind == k) out.push_back(nodes_[i].name);
    return out;
  }

  std::vector<std::string> mediators() const { return names_of(NodeKind::mediator); }

  const DagEdge* find_edge(const std::string& from, const std::string& to) const {
    for (const auto& e : edges_)
      if (e.from == from && e.to == to) return &e;
    return nullptr;
  }

  bool fully_specified() const {
    return std::all_of(edges_.begin(), edges_.end(), [](const DagEdge& e) { return e.effect.has_value(); });
  }

  std::vector<std::size_t> unknown_edges() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < edges_.size(); ++i)
      if (!edges_[i].effect) out.push_back(i);
    return out;
  }

  /// Copy with edge `i` set to `effect`.
  CausalDag with_effect(std::size_t i, double effect) const {
    CausalDag d = *this;
    d.edges_.at(i).effect = effect;
    d.validate();
    return d;
  }

 private:
  void validate() {
    index_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].name.empty()) throw InvalidSpecError("DAG node with empty name");
      if (!index_.emplace(nodes_[i].name, i).second)
        throw InvalidSpecError("duplicate DAG node '" + nodes_[i].name + "'");
    }
    std::size_t n_outcomes = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].kind == NodeKind::outcome) {
        outcome_ = i;
        ++n_outcomes;
      }
    if (n_outcomes != 1) throw InvalidSpecError("DAG must have exactly one outcome node");

    std::vector<std::vector<std::size_t>> children(nodes_.size());
    std::vector<int> indegree(nodes_.size(), 0);
    std::map<std::pair<std::size_t, std::size_t>, bool> seen;
    for (const auto& e : edges_) {
      const std::size_t a = index(e.from), b = index(e.to);
      if (a == b) throw InvalidSpecError("self loop on '" + e.from + "'");
      if (nodes_[b].kind == NodeKind::intervention)
        throw InvalidSpecError("edge into intervention '" + e.to + "'");
      if (nodes_[a].kind == NodeKind::outcome) throw InvalidSpecError("edge out of the outcome node");
      if (e.effect && !std::isfinite(*e.effect)) throw InvalidSpecError("non-finite effect on " + e.label());
      if (seen[{a, b}]) throw InvalidSpecError("duplicate edge " + e.label());
      seen[{a, b}] = true;
      children[a].push_back(b);
      ++indegree[b];
    }
    order_.clear();
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (indegree[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
      const std::size_t i = ready.front();
      ready.erase(ready.begin());
      order_.push_back(i);
      for (std::size_t c : children[i])
        if (--indegree[c] == 0) ready.push_back(c);
    }
    if (order_.size() != nodes_.size()) throw InvalidSpecError("DAG contains a cycle");

    for (const auto& k : knowns_) {
      if (kind(k.intervention) != NodeKind::intervention)
        throw InvalidSpecError("known total for non-intervention '" + k.intervention + "'");
      if (!std::isfinite(k.total)) throw InvalidSpecError("non-finite known total");
    }
  }

  std::vector<DagNode> nodes_;
  std::vector<DagEdge> edges_;
  std::vector<KnownTotal> knowns_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> order_;
  std::size_t outcome_ = 0;
};

namespace detail {

/// c + sum_e coef[e] * x_e over unknown edges. `nonlinear` marks a form that
/// picked up a product of two unknowns.
struct AffineForm {
  double c = 0.0;
  std::map<std::size_t, double> coef;
  bool nonlinear = false;
};

/// Path sum from `source` to the outcome, linear in the unknown edges.
inline AffineForm path_sum(const CausalDag& dag, std::size_t source) {
  const auto& nodes = dag.nodes();
  std::vector<AffineForm> value(nodes.size());
  std::vector<bool> reached(nodes.size(), false);
  value[source].c = 1.0;
  reached[source] = true;
  for (std::size_t i : dag.topological_order()) {
    if (!reached[i]) continue;
    for (std::size_t e = 0; e < dag.edges().size(); ++e) {
      const auto& edge = dag.edges()[e];
      if (edge.from != nodes[i].name) continue;
      const std::size_t j = dag.index(edge.to);
      auto& out = value[j];
      reached[j] = true;
      const auto& in = value[i];
      out.nonlinear = out.nonlinear || in.nonlinear;
      if (edge.effect) {
        out.c += in.c * *edge.effect;
        for (const auto& [k, v] : in.coef) out.coef[k] += v * *edge.effect;
      } else {
        if (!in.coef.empty()) out.nonlinear = true;
        out.coef[e] += in.c;
      }
    }
  }
  return value[dag.index(dag.outcome())];
}

inline std::string edge_list(const CausalDag& dag, const std::vector<std::size_t>& idx) {
  std::string s;
  for (std::size_t i : idx) s += (s.empty() ? "" : ", ") + dag.edges()[i].label();
  return s;
}

}  // namespace detail

/// Sum over directed paths from the node to the outcome of the product of
/// edge effects (a direct intervention -> outcome edge is a path of length 1).
inline double total_effect(const CausalDag& dag, const std::string& intervention) {
  const auto form = detail::path_sum(dag, dag.index(intervention));
  if (!form.coef.empty()) {
    std::vector<std::size_t> idx;
    for (const auto& [e, v] : form.coef) idx.push_back(e);
    throw UnresolvedEffectError("unknown effects on paths from '" + intervention +
                                "': " + detail::edge_list(dag, idx));
  }
  return form.c;
}

/// Solves for every unknown edge so that each known total equals its
/// path sum. Least squares via column-pivoted QR; an underdetermined system
/// raises RankDeficiencyError naming the unknowns it cannot pin down, and a
/// residual above `tolerance` raises InfeasibleSystemError.
inline CausalDag resolve_direct_effects(const CausalDag& dag, const std::vector<KnownTotal>& knowns,
                                        double tolerance = 1e-10) {
  const auto unknown = dag.unknown_edges();
  std::map<std::size_t, std::size_t> column;
  for (std::size_t k = 0; k < unknown.size(); ++k) column[unknown[k]] = k;

  const auto m = static_cast<Eigen::Index>(knowns.size());
  const auto u = static_cast<Eigen::Index>(unknown.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, u);
  Eigen::VectorXd b(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& k = knowns[static_cast<std::size_t>(r)];
    if (dag.kind(k.intervention) != NodeKind::intervention)
      throw InvalidSpecError("known total for non-intervention '" + k.intervention + "'");
    const auto form = detail::path_sum(dag, dag.index(k.intervention));
    if (form.nonlinear)
      throw InvalidSpecError("paths from '" + k.intervention + "' chain two unknown effects; the system is not linear");
    b(r) = k.total - form.c;
    for (const auto& [e, v] : form.coef) a(r, static_cast<Eigen::Index>(column.at(e))) = v;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(u);
  if (u > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    if (m == 0 || qr.rank() < u) {
      Eigen::MatrixXd kernel = Eigen::MatrixXd::Identity(u, u);
      if (m > 0) kernel = Eigen::FullPivLU<Eigen::MatrixXd>(a).kernel();
      std::vector<std::size_t> free;
      std::vector<std::string> names;
      for (Eigen::Index k = 0; k < u; ++k)
        if (kernel.row(k).cwiseAbs().maxCoeff() > 1e-12) {
          free.push_back(unknown[static_cast<std::size_t>(k)]);
          names.push_back(dag.edges()[unknown[static_cast<std::size_t>(k)]].label());
        }
      throw RankDeficiencyError("underdetermined effect system; free unknowns: " + detail::edge_list(dag, free),
                                names);
    }
    x = qr.solve(b);
  }
  const Eigen::VectorXd r = a * x - b;
  if (m > 0 && r.cwiseAbs().maxCoeff() > tolerance)
    throw InfeasibleSystemError("known totals are inconsistent with the DAG",
                                std::vector<double>(r.data(), r.data() + r.size()));

  CausalDag out = dag;
  for (std::size_t k = 0; k < unknown.size(); ++k) out = out.with_effect(unknown[k], x(static_cast<Eigen::Index>(k)));
  return out;
}

inline CausalDag resolve_direct_effects(const CausalDag& dag, double tolerance = 1e-10) {
  return resolve_direct_effects(dag, dag.knowns(), tolerance);
}

/// Total shift of every mediator after propagating the direct deltas along
/// mediator -> mediator edges.
inline std::map<std::string, double> knock_on(const CausalDag& dag, const InterventionSpec& spec) {
  std::map<std::string, double> total;
  for (const auto& m : dag.mediators()) total[m] = 0.0;
  for (const auto& [name, d] : spec.deltas) {
    if (!dag.has_node(name) || dag.kind(name) != NodeKind::mediator)
      throw ValidationError("intervention '" + spec.name + "' shifts unknown mediator '" + name + "'");
    if (!std::isfinite(d)) throw ValidationError("non-finite delta for '" + name + "'");
    total[name] = d;
  }
  for (std::size_t i : dag.topological_order()) {
    const auto& node = dag.nodes()[i];
    if (node.kind != NodeKind::mediator) continue;
    for (const auto& e : dag.edges()) {
      if (e.from != node.name || dag.kind(e.to) != NodeKind::mediator) continue;
      if (!e.effect) throw UnresolvedEffectError("unknown effect on " + e.label());
      total[e.to] += total[node.name] * *e.effect;
    }
  }
  return total;
}

/// Current level and no-benefit threshold of a mediator, for consumers that
/// assume no further benefit below the target.
struct MediatorClip {
  double value = 0.0;
  double target = 0.0;
};

/// Sum over mediators of shift times the mediator's effect on the outcome,
/// with no further propagation. Mediators listed in `clip` contribute
/// b * (max(0, x + d - target) - max(0, x - target)) instead of b * d.
inline double mediator_log_effect(const CausalDag& dag, const std::map<std::string, double>& shift,
                                  const std::map<std::string, MediatorClip>& clip = {}) {
  double total = 0.0;
  for (const auto& [m, d] : shift) {
    if (!dag.has_node(m) || dag.kind(m) != NodeKind::mediator)
      throw ValidationError("shift on unknown mediator '" + m + "'");
    const DagEdge* e = dag.find_edge(m, dag.outcome());
    if (!e) continue;
    if (!e->effect) throw UnresolvedEffectError("unknown effect on " + e->label());
    auto c = clip.find(m);
    if (c == clip.end()) {
      total += d * *e->effect;
    } else {
      const double before = std::max(0.0, c->second.value - c->second.target);
      const double after = std::max(0.0, c->second.value + d - c->second.target);
      total += (after - before) * *e->effect;
    }
  }
  return total;
}

/// Log-scale effect of the intervention on the outcome: each mediator's
/// knock-on shift times its effect on the outcome, plus the direct effect.
inline double intervention_log_effect(const CausalDag& dag, const InterventionSpec& spec,
                                      const std::map<std::string, MediatorClip>& clip = {}) {
  if (!std::isfinite(spec.direct_outcome_effect)) throw ValidationError("non-finite direct effect");
  return spec.direct_outcome_effect + mediator_log_effect(dag, knock_on(dag, spec), clip);
}

/// The mediator shifts and direct outcome effect that starting the named
/// intervention implies, read off its outgoing edges.
inline InterventionSpec intervention_spec(const CausalDag& dag, const std::string& intervention) {
  if (dag.kind(intervention) != NodeKind::intervention)
    throw ValidationError("'" + intervention + "' is not an intervention node");
  InterventionSpec s{intervention, {}, 0.0};
  for (const auto& e : dag.edges()) {
    if (e.from != intervention) continue;
    if (!e.effect) throw UnresolvedEffectError("unknown effect on " + e.label());
    if (e.to == dag.outcome())
      s.direct_outcome_effect = *e.effect;
    else
      s.deltas[e.to] = *e.effect;
  }
  return s;
}

/// Statin / antihypertensive / SBP / BMI / non-HDL graph used by default.
/// Mediator effects on the outcome are the fixed per-unit constants; the
/// drug edges marked unknown are resolved from the drugs' total effects.
inline CausalDag default_dag(const EffectConstants& c = {}) {
  std::vector<DagNode> nodes{{"statin", NodeKind::intervention},
                             {"antihypertensive", NodeKind::intervention},
                             {"bmi", NodeKind::mediator},
                             {"sbp", NodeKind::mediator},
                             {"nonhdl", NodeKind::mediator},
                             {"cvd", NodeKind::outcome}};
  std::vector<DagEdge> edges{{"bmi", "sbp", 0.7},
                             {"bmi", "nonhdl", 0.1044},
                             {"bmi", "cvd", c.b_bmi},
                             {"sbp", "cvd", c.b_sbp},
                             {"nonhdl", "cvd", c.b_nonhdl},
                             {"antihypertensive", "sbp", -10.0},
                             {"antihypertensive", "cvd", std::nullopt},
                             {"statin", "nonhdl", std::nullopt},
                             {"statin", "cvd", 0.0}};
  std::vector<KnownTotal> knowns{{"statin", c.b_stat}, {"antihypertensive", c.b_ah}};
  return CausalDag(std::move(nodes), std::move(edges), std::move(knowns));
}

inline void to_json(nlohmann::json& j, const CausalDag& d) {
  j = nlohmann::json::object();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : d.nodes()) j["nodes"].push_back({{"name", n.name}, {"kind", to_string(n.kind)}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : d.edges()) {
    nlohmann::json je{{"from", e.from}, {"to", e.to}};
    je["effect"] = e.effect ? nlohmann::json(*e.effect) : nlohmann::json(nullptr);
    j["edges"].push_back(je);
  }
  j["knowns"] = nlohmann::json::array();
  for (const auto& k : d.knowns()) j["knowns"].push_back({{"intervention", k.intervention}, {"total", k.total}});
}

inline void from_json(const nlohmann::json& j, CausalDag& d) {
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
    throw InvalidSpecError("DAG JSON needs 'nodes' and 'edges'");
  std::vector<DagNode> nodes;
  for (const auto& n : j.at("nodes"))
    nodes.push_back({n.at("name").get<std::string>(), parse_node_kind(n.at("kind").get<std::string>())});
  std::vector<DagEdge> edges;
  for (const auto& e : j.at("edges")) {
    DagEdge de{e.at("from").get<std::string>(), e.at("to").get<std::string>(), std::nullopt};
    if (e.contains("effect") && !e.at("effect").is_null()) de.effect = e.at("effect").get<double>();
    edges.push_back(std::move(de));
  }
  std::vector<KnownTotal> knowns;
  if (j.contains("knowns"))
    for (const auto& k : j.at("knowns"))
      knowns.push_back({k.at("intervention").get<std::string>(), k.at("total").get<double>()});
  d = CausalDag(std::move(nodes), std::move(edges), std::move(knowns));
}

inline void to_json(nlohmann::json& j, const InterventionSpec& s) {
  j = {{"name", s.name}, {"deltas", s.deltas}, {"direct_outcome_effect", s.direct_outcome_effect}};
}

inline void from_json(const nlohmann::json& j, InterventionSpec& s) {
  if (!j.is_object()) throw ValidationError("intervention spec must be an object");
  s.name = j.value("name", std::string());
  s.deltas = j.value("deltas", std::map<std::string, double>{});
  s.direct_outcome_effect = j.value("direct_outcome_effect", 0.0);
}

}  // namespace pui
