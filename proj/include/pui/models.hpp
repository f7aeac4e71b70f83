#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pui/cohort.hpp"
#include "pui/cox.hpp"
#include "pui/csv.hpp"
#include "pui/dag.hpp"
#include "pui/error.hpp"
#include "pui/formula.hpp"
#include "pui/timeline.hpp"

namespace pui {

enum class Variant {
  noncausal,
  treatment_offset,
  unexposed_mediator,
  mrf,
  two_component,
  mrf_fix_sbp,
  mrf_fix_bmi,
  mrf_fix_nonhdl,
};

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::noncausal,   Variant::treatment_offset, Variant::unexposed_mediator,
                                      Variant::mrf,         Variant::two_component,    Variant::mrf_fix_sbp,
                                      Variant::mrf_fix_bmi, Variant::mrf_fix_nonhdl};
  return v;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::noncausal: return "noncausal";
    case Variant::treatment_offset: return "treatment_offset";
    case Variant::unexposed_mediator: return "unexposed_mediator";
    case Variant::mrf: return "mrf";
    case Variant::two_component: return "two_component";
    case Variant::mrf_fix_sbp: return "mrf_fix_sbp";
    case Variant::mrf_fix_bmi: return "mrf_fix_bmi";
    default: return "mrf_fix_nonhdl";
  }
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw ValidationError("unknown model variant '" + s + "'");
}

inline bool is_mrf_family(Variant v) {
  return v == Variant::mrf || v == Variant::mrf_fix_sbp || v == Variant::mrf_fix_bmi || v == Variant::mrf_fix_nonhdl;
}

/// Treatment offsets the variant is fitted with; nullopt for none.
inline std::optional<OffsetMode> treatment_offset_mode(Variant v) {
  switch (v) {
    case Variant::noncausal: return std::nullopt;
    case Variant::treatment_offset:
    case Variant::unexposed_mediator: return OffsetMode::absolute;
    default: return OffsetMode::relative;
  }
}

/// Risk factors whose effect is fixed through the clipped offset.
inline MrfFactors fixed_factors(Variant v) {
  switch (v) {
    case Variant::mrf: return {true, true, true};
    case Variant::mrf_fix_sbp: return {true, false, false};
    case Variant::mrf_fix_bmi: return {false, true, false};
    case Variant::mrf_fix_nonhdl: return {false, false, true};
    default: return {false, false, false};
  }
}

inline const std::vector<std::string>& nonmodifiable_terms() {
  static const std::vector<std::string> z{"sex", "diabetes", "smoker"};
  return z;
}

inline const std::vector<std::string>& mediator_names() {
  static const std::vector<std::string> m{"sbp", "bmi", "nonhdl"};
  return m;
}

/// age + Z + splines of the free risk factors, everything interacted with
/// age. The non-causal variant adds baseline antihypertensive use.
inline FormulaSpec variant_formula(Variant v, int n_knots = 4) {
  FormulaSpec f;
  f.linear.push_back("age");
  for (const auto& z : nonmodifiable_terms()) f.linear.push_back(z);
  const MrfFactors fixed = fixed_factors(v);
  const std::string sbp_column = v == Variant::unexposed_mediator ? "sbp_unexposed" : "sbp";
  if (!fixed.sbp) f.splines.push_back({sbp_column, {}, n_knots});
  if (!fixed.bmi) f.splines.push_back({"bmi", {}, n_knots});
  if (!fixed.nonhdl) f.splines.push_back({"nonhdl", {}, n_knots});
  for (const auto& z : nonmodifiable_terms()) f.interactions.push_back({"age", z});
  for (const auto& s : f.splines) f.interactions.push_back({"age", s.variable});
  if (v == Variant::noncausal) f.linear.push_back("ah_baseline");
  return f;
}

/// One subject of a baseline cohort: follow-up time, event flag and the
/// covariates measured at time zero.
struct Subject {
  std::string id;
  double time = 0.0;
  bool event = false;
  std::map<std::string, double> covariates;

  double at(const std::string& name) const {
    auto it = covariates.find(name);
    if (it == covariates.end()) throw MissingColumnError(name);
    return it->second;
  }
};

inline std::vector<Subject> subjects_from_table(const csv::Table& t) {
  const auto c_id = t.column("subject_id"), c_time = t.column("time"), c_event = t.column("event");
  std::vector<Subject> out;
  out.reserve(t.rows.size());
  std::set<std::string> seen;
  for (const auto& cells : t.rows) {
    Subject s;
    s.id = cells[c_id];
    if (!seen.insert(s.id).second) throw ValidationError("duplicate subject " + s.id);
    s.time = csv::parse_double(cells[c_time], "time");
    if (!(s.time > 0.0)) throw ValidationError("subject " + s.id + ": time must be positive");
    const double ev = csv::parse_double(cells[c_event], "event");
    if (ev != 0.0 && ev != 1.0) throw ValidationError("event must be 0 or 1");
    s.event = ev == 1.0;
    for (std::size_t i = 0; i < t.header.size(); ++i)
      if (i != c_id && i != c_time && i != c_event) s.covariates[t.header[i]] = csv::parse_double(cells[i], t.header[i]);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Subject> read_subjects_csv(const std::string& path) {
  return subjects_from_table(csv::read_file(path));
}

inline csv::Table subjects_to_table(const std::vector<Subject>& subjects) {
  csv::Table t;
  t.header = {"subject_id", "time", "event"};
  std::vector<std::string> names;
  if (!subjects.empty())
    for (const auto& [k, v] : subjects.front().covariates) names.push_back(k);
  t.header.insert(t.header.end(), names.begin(), names.end());
  for (const auto& s : subjects) {
    std::vector<std::string> cells{s.id, csv::format_double(s.time), s.event ? "1" : "0"};
    for (const auto& n : names) cells.push_back(csv::format_double(s.at(n)));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Layered segments for a subject over [0, time]. A subject without a
/// timeline is untreated throughout.
inline std::vector<StatusSegment> segments_for(const Subject& s,
                                               const std::map<std::string, SubjectTimeline>& timelines) {
  auto it = timelines.find(s.id);
  if (it == timelines.end()) return {StatusSegment{0.0, s.time, 0, 0, 0, 0}};
  auto seg = subject_segments(it->second);
  if (seg.back().end < s.time)
    throw TimelineIntegrityError("subject " + s.id + ": timeline ends before follow-up");
  return seg;
}

/// Counting-process rows for fitting `v`: one row per treatment segment,
/// carrying the variant's treatment offset (plus the clipped risk-factor
/// offset for the MRF family) and the baseline treatment statuses.
inline std::vector<CohortRow> variant_rows(Variant v, const std::vector<Subject>& subjects,
                                           const std::map<std::string, SubjectTimeline>& timelines,
                                           const EffectConstants& c) {
  const auto mode = treatment_offset_mode(v);
  const MrfFactors fixed = fixed_factors(v);
  std::vector<CohortRow> rows;
  rows.reserve(subjects.size() * 2);
  for (const auto& s : subjects) {
    const auto seg = segments_for(s, timelines);
    auto cov = s.covariates;
    cov["ah_baseline"] = seg.front().a_ah;
    cov["statin_baseline"] = seg.front().a_stat;
    double constant = 0.0;
    if (is_mrf_family(v)) constant = mrf_offset(s.at("sbp"), s.at("bmi"), s.at("nonhdl"), c, fixed);
    auto r = rows_from_segments(s.id, cov, seg, s.time, s.event, c, mode.value_or(OffsetMode::absolute), constant);
    if (!mode)
      for (auto& row : r) row.offset = 0.0;
    for (auto& row : r) rows.push_back(std::move(row));
  }
  return rows;
}

enum class Combination { cumhaz, odds };

inline std::string to_string(Combination c) { return c == Combination::odds ? "odds" : "cumhaz"; }

inline Combination parse_combination(const std::string& s) {
  if (s == "odds") return Combination::odds;
  if (s == "cumhaz") return Combination::cumhaz;
  throw ValidationError("unknown combination '" + s + "'");
}

/// A fitted variant with everything needed to predict from it.
struct ModelArtifact {
  Variant variant = Variant::noncausal;
  CoxFit fit;
  EffectConstants constants;
  CausalDag dag;  // fully specified
  Combination combination = Combination::odds;  // two-component intervention layer only
  bool clip_intervention = false;               // two-component: no benefit below targets
  std::string created;
};

inline ModelArtifact fit_variant(Variant v, const std::vector<Subject>& subjects,
                                 const std::map<std::string, SubjectTimeline>& timelines,
                                 const EffectConstants& constants = {}, std::optional<CausalDag> dag = std::nullopt,
                                 const CoxOptions& opt = {}) {
  constants.validate();
  ModelArtifact a;
  a.variant = v;
  a.constants = constants;
  a.dag = resolve_direct_effects(dag ? *dag : default_dag(constants));
  a.fit = fit_cox(variant_rows(v, subjects, timelines, constants), variant_formula(v), opt);
  return a;
}

inline void to_json(nlohmann::json& j, const EffectConstants& c) {
  j = {{"b_stat", c.b_stat},         {"b_ah", c.b_ah},           {"b_sbp", c.b_sbp},
       {"b_bmi", c.b_bmi},           {"b_nonhdl", c.b_nonhdl},   {"sbp_target", c.sbp_target},
       {"bmi_target", c.bmi_target}, {"nonhdl_target", c.nonhdl_target}};
}

inline void from_json(const nlohmann::json& j, EffectConstants& c) {
  c = EffectConstants{};
  c.b_stat = j.value("b_stat", c.b_stat);
  c.b_ah = j.value("b_ah", c.b_ah);
  c.b_sbp = j.value("b_sbp", c.b_sbp);
  c.b_bmi = j.value("b_bmi", c.b_bmi);
  c.b_nonhdl = j.value("b_nonhdl", c.b_nonhdl);
  c.sbp_target = j.value("sbp_target", c.sbp_target);
  c.bmi_target = j.value("bmi_target", c.bmi_target);
  c.nonhdl_target = j.value("nonhdl_target", c.nonhdl_target);
  c.validate();
}

inline void to_json(nlohmann::json& j, const ModelArtifact& a) {
  j = nlohmann::json::object();
  j["variant"] = to_string(a.variant);
  j["cox"] = a.fit;
  const auto mode = treatment_offset_mode(a.variant);
  const MrfFactors f = fixed_factors(a.variant);
  std::vector<std::string> fixed;
  if (f.sbp) fixed.push_back("sbp");
  if (f.bmi) fixed.push_back("bmi");
  if (f.nonhdl) fixed.push_back("nonhdl");
  j["offsets"] = {{"treatment", mode ? to_string(*mode) : "none"}, {"fixed_risk_factors", fixed}};
  j["constants"] = a.constants;
  j["dag"] = a.dag;
  j["combination"] = to_string(a.combination);
  j["clip_intervention"] = a.clip_intervention;
  j["created"] = a.created;
}

inline void from_json(const nlohmann::json& j, ModelArtifact& a) {
  if (!j.is_object()) throw ValidationError("model artifact must be a JSON object");
  a = ModelArtifact{};
  a.variant = parse_variant(j.at("variant").get<std::string>());
  a.fit = j.at("cox").get<CoxFit>();
  a.constants = j.value("constants", nlohmann::json::object()).get<EffectConstants>();
  a.dag = j.contains("dag") ? j.at("dag").get<CausalDag>() : default_dag(a.constants);
  if (!a.dag.fully_specified()) a.dag = resolve_direct_effects(a.dag);
  a.combination = parse_combination(j.value("combination", std::string("odds")));
  a.clip_intervention = j.value("clip_intervention", false);
  a.created = j.value("created", std::string());
  FormulaSpec expected = variant_formula(a.variant);
  for (auto& s : expected.splines)
    if (const auto* fitted = a.fit.formula.spline_for(s.variable)) s.knots = fitted->knots;
  if (expanded_columns(expected) != a.fit.columns)
    throw ValidationError("model artifact columns do not match variant " + to_string(a.variant));
}

inline ModelArtifact read_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model artifact " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return j.get<ModelArtifact>();
}

inline void write_artifact(const std::string& path, const ModelArtifact& a) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << nlohmann::json(a).dump(2) << '\n';
}

/// Patient state at one visit. `m` holds the modifiable risk factors
/// (sbp, sbp_unexposed, bmi, nonhdl), `z` the rest (including age), `a`
/// the current statin / antihypertensive status.
struct VisitRecord {
  std::string patient_id;
  double time = 0.0;
  std::map<std::string, double> m;
  std::map<std::string, double> z;
  int statin = 0;
  int antihypertensive = 0;

  void validate() const {
    for (const auto& [k, v] : m)
      if (!std::isfinite(v)) throw ValidationError("non-finite value for " + k);
    for (const auto& [k, v] : z)
      if (!std::isfinite(v)) throw ValidationError("non-finite value for " + k);
    if ((statin != 0 && statin != 1) || (antihypertensive != 0 && antihypertensive != 1))
      throw ValidationError("treatment status must be 0 or 1");
  }

  double mediator(const std::string& name) const {
    auto it = m.find(name);
    if (it == m.end()) throw MissingColumnError(name);
    return it->second;
  }
};

/// The first visit a two-component prediction conditions on.
struct Anchor {
  std::string patient_id;
  double time = 0.0;
  std::map<std::string, double> m;
  int statin = 0;
  int antihypertensive = 0;
};

inline Anchor anchor_from_visit(const VisitRecord& v) {
  v.validate();
  return {v.patient_id, v.time, v.m, v.statin, v.antihypertensive};
}

/// A hypothetical (or, with `achieved`, already realised) change: DAG
/// mediator shifts plus optional treatment toggles.
struct InterventionScenario {
  std::string label;
  InterventionSpec spec;
  bool achieved = false;
  std::optional<int> statin;
  std::optional<int> antihypertensive;

  bool empty() const { return spec.deltas.empty() && spec.direct_outcome_effect == 0.0 && !statin && !antihypertensive; }
};

struct RiskEstimate {
  double risk = 0.0;
  double horizon = 3653.0;
  Variant variant = Variant::noncausal;
  std::string label;
  double baseline_risk = 0.0;
  double log_multiplier = 0.0;
  Combination combination = Combination::cumhaz;
};

inline constexpr double kDefaultHorizon = 3653.0;

/// odds(p') = odds(p) * exp(log_multiplier).
inline double two_component_combine(double p, double log_multiplier) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("baseline risk outside [0, 1]");
  if (!std::isfinite(log_multiplier)) throw ValidationError("non-finite intervention effect");
  if (p == 1.0) throw DegenerateOddsError("baseline risk of 1 has infinite odds");
  if (p == 0.0) return 0.0;
  return 1.0 / (1.0 + (1.0 - p) / p * std::exp(-log_multiplier));
}

inline double two_component_combine(double p, const std::map<std::string, double>& delta_m,
                                    const std::map<std::string, double>& beta_int, double direct) {
  double lm = direct;
  for (const auto& [k, d] : delta_m) {
    auto it = beta_int.find(k);
    if (it == beta_int.end()) throw MissingColumnError(k);
    lm += d * it->second;
  }
  return two_component_combine(p, lm);
}

/// 1 - (1 - p)^exp(log_multiplier).
inline double cumhaz_combine(double p, double log_multiplier) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("baseline risk outside [0, 1)");
  return -std::expm1(std::log1p(-p) * std::exp(log_multiplier));
}

inline double combine(Combination c, double p, double log_multiplier) {
  return c == Combination::odds ? two_component_combine(p, log_multiplier) : cumhaz_combine(p, log_multiplier);
}

namespace detail {

inline std::map<std::string, double> visit_covariates(const VisitRecord& v) {
  auto cov = v.z;
  for (const auto& [k, x] : v.m) cov[k] = x;
  cov["ah_baseline"] = v.antihypertensive;
  cov["statin_baseline"] = v.statin;
  return cov;
}

inline void add_spec(InterventionSpec& into, const InterventionSpec& s, double sign) {
  for (const auto& [k, d] : s.deltas) into.deltas[k] += sign * d;
  into.direct_outcome_effect += sign * s.direct_outcome_effect;
}

/// Mediator shifts and direct effect implied by switching each toggled drug
/// away from its current status.
inline InterventionSpec drug_spec(const CausalDag& dag, const VisitRecord& v, const InterventionScenario& s) {
  InterventionSpec out{"drugs", {}, 0.0};
  if (s.statin && *s.statin != v.statin)
    add_spec(out, intervention_spec(dag, "statin"), *s.statin - v.statin);
  if (s.antihypertensive && *s.antihypertensive != v.antihypertensive)
    add_spec(out, intervention_spec(dag, "antihypertensive"), *s.antihypertensive - v.antihypertensive);
  return out;
}

inline double risk_from_lp(double h0, double lp) { return h0 == 0.0 ? 0.0 : -std::expm1(-h0 * std::exp(lp)); }

inline void check_scenario(const InterventionScenario& s) {
  for (auto t : {s.statin, s.antihypertensive})
    if (t && *t != 0 && *t != 1) throw ValidationError("treatment toggle must be 0 or 1");
}

inline void shift_visit(VisitRecord& v, const std::map<std::string, double>& shift, bool unexposed_follows) {
  for (const auto& [k, d] : shift) {
    if (d == 0.0) continue;
    auto it = v.m.find(k);
    if (it == v.m.end()) throw MissingColumnError(k);
    it->second += d;
    if (k == "sbp" && unexposed_follows) {
      auto u = v.m.find("sbp_unexposed");
      if (u != v.m.end()) u->second += d;
    }
  }
}

}  // namespace detail

/// The visit that results if the scenario is carried out: mediators move by
/// the knock-on shifts, treatment statuses follow the toggles. Shifts caused
/// by drugs leave sbp_unexposed alone; other shifts move it with sbp.
inline VisitRecord scenario_response_visit(const ModelArtifact& a, const VisitRecord& v,
                                           const InterventionScenario& s) {
  detail::check_scenario(s);
  VisitRecord out = v;
  if (s.achieved) return out;
  detail::shift_visit(out, knock_on(a.dag, s.spec), true);
  detail::shift_visit(out, knock_on(a.dag, detail::drug_spec(a.dag, v, s)), false);
  if (s.statin) out.statin = *s.statin;
  if (s.antihypertensive) out.antihypertensive = *s.antihypertensive;
  return out;
}

namespace detail {

/// Variants whose drug effects act through a treatment offset: the scenario's
/// own shifts move the mediators, toggles move the offset.
inline RiskEstimate predict_offset_family(const ModelArtifact& a, const VisitRecord& v, const InterventionScenario& s,
                                          double horizon) {
  const double h0 = a.fit.cumhaz(horizon);
  const bool absolute = a.variant != Variant::noncausal;
  auto lp_of = [&](const VisitRecord& x) {
    double lp = a.fit.linear_predictor(visit_covariates(x));
    if (absolute) lp += x.statin * a.constants.b_stat + x.antihypertensive * a.constants.b_ah;
    return lp;
  };
  const double lp0 = lp_of(v);
  double lp1 = lp0;
  if (!s.achieved && !s.empty()) {
    VisitRecord hyp = v;
    shift_visit(hyp, knock_on(a.dag, s.spec), true);
    if (s.statin) hyp.statin = *s.statin;
    if (s.antihypertensive) hyp.antihypertensive = *s.antihypertensive;
    lp1 = lp_of(hyp) + s.spec.direct_outcome_effect;
  }
  RiskEstimate r;
  r.risk = risk_from_lp(h0, lp1);
  r.baseline_risk = risk_from_lp(h0, lp0);
  r.log_multiplier = lp1 - lp0;
  r.combination = Combination::cumhaz;
  return r;
}

inline double mrf_lp(const ModelArtifact& a, const VisitRecord& v) {
  return a.fit.linear_predictor(visit_covariates(v)) +
         mrf_offset(v.mediator("sbp"), v.mediator("bmi"), v.mediator("nonhdl"), a.constants, fixed_factors(a.variant));
}

inline RiskEstimate predict_mrf_family(const ModelArtifact& a, const VisitRecord& v, const InterventionScenario& s,
                                       double horizon) {
  const double h0 = a.fit.cumhaz(horizon);
  const double lp0 = mrf_lp(a, v);
  double lp1 = lp0;
  if (!s.achieved && !s.empty()) {
    InterventionSpec total = s.spec;
    add_spec(total, drug_spec(a.dag, v, s), 1.0);
    VisitRecord hyp = v;
    shift_visit(hyp, knock_on(a.dag, total), false);
    lp1 = mrf_lp(a, hyp) + total.direct_outcome_effect;
  }
  RiskEstimate r;
  r.risk = risk_from_lp(h0, lp1);
  r.baseline_risk = risk_from_lp(h0, lp0);
  r.log_multiplier = lp1 - lp0;
  r.combination = Combination::cumhaz;
  return r;
}

inline RiskEstimate predict_two_component_impl(const ModelArtifact& a, const Anchor& anchor, const VisitRecord& v,
                                               const InterventionScenario& s, double horizon) {
  if (anchor.patient_id != v.patient_id)
    throw ValidationError("anchor belongs to patient " + anchor.patient_id + ", visit to " + v.patient_id);
  const double h0 = a.fit.cumhaz(horizon);
  // Baseline component: anchored risk factors, current non-modifiable ones.
  VisitRecord base = v;
  base.m = anchor.m;
  base.statin = anchor.statin;
  base.antihypertensive = anchor.antihypertensive;
  const double p = risk_from_lp(h0, a.fit.linear_predictor(visit_covariates(base)));

  // Intervention component: change since the anchor plus the scenario.
  InterventionSpec total{"since_anchor", {}, 0.0};
  if (!s.achieved && !s.empty()) {
    total = s.spec;
    add_spec(total, drug_spec(a.dag, v, s), 1.0);
  }
  const auto scenario_shift = knock_on(a.dag, total);
  std::map<std::string, double> shift;
  std::map<std::string, MediatorClip> clip;
  const std::map<std::string, double> targets{
      {"sbp", a.constants.sbp_target}, {"bmi", a.constants.bmi_target}, {"nonhdl", a.constants.nonhdl_target}};
  for (const auto& m : a.dag.mediators()) {
    auto an = anchor.m.find(m);
    if (an == anchor.m.end()) throw MissingColumnError(m);
    shift[m] = (v.mediator(m) - an->second) + scenario_shift.at(m);
    auto t = targets.find(m);
    if (a.clip_intervention && t != targets.end()) clip[m] = {an->second, t->second};
  }
  double lm = total.direct_outcome_effect + mediator_log_effect(a.dag, shift, clip);
  // Direct drug effects for status changes the visit already carries.
  auto direct_of = [&](const std::string& drug) {
    const DagEdge* e = a.dag.find_edge(drug, a.dag.outcome());
    return e && e->effect ? *e->effect : 0.0;
  };
  if (v.statin != anchor.statin) lm += (v.statin - anchor.statin) * direct_of("statin");
  if (v.antihypertensive != anchor.antihypertensive)
    lm += (v.antihypertensive - anchor.antihypertensive) * direct_of("antihypertensive");

  RiskEstimate r;
  r.baseline_risk = p;
  r.log_multiplier = lm;
  r.combination = a.combination;
  r.risk = combine(a.combination, p, lm);
  return r;
}

inline void expect_variant(const ModelArtifact& a, std::initializer_list<Variant> ok, const char* op) {
  for (Variant v : ok)
    if (a.variant == v) return;
  throw VariantMismatchError(std::string(op) + " does not accept a " + to_string(a.variant) + " model");
}

inline RiskEstimate finish(RiskEstimate r, const ModelArtifact& a, const InterventionScenario& s, double horizon) {
  r.variant = a.variant;
  r.label = s.label;
  r.horizon = horizon;
  return r;
}

}  // namespace detail

/// Risk at `horizon` under the scenario, dispatching on the artifact's
/// variant. Two-component models need the patient's anchor.
inline RiskEstimate predict(const ModelArtifact& a, const VisitRecord& v, const InterventionScenario& s = {},
                            const Anchor* anchor = nullptr, double horizon = kDefaultHorizon) {
  v.validate();
  detail::check_scenario(s);
  if (!std::isfinite(s.spec.direct_outcome_effect)) throw ValidationError("non-finite direct effect");
  RiskEstimate r;
  switch (a.variant) {
    case Variant::noncausal:
    case Variant::treatment_offset:
    case Variant::unexposed_mediator: r = detail::predict_offset_family(a, v, s, horizon); break;
    case Variant::two_component:
      if (!anchor) throw AnchorRequiredError("two-component prediction needs the patient's first-visit anchor");
      r = detail::predict_two_component_impl(a, *anchor, v, s, horizon);
      break;
    default: r = detail::predict_mrf_family(a, v, s, horizon);
  }
  return detail::finish(r, a, s, horizon);
}

inline RiskEstimate predict_noncausal(const ModelArtifact& a, const VisitRecord& v, std::optional<int> a_hyp,
                                      double horizon = kDefaultHorizon) {
  detail::expect_variant(a, {Variant::noncausal}, "predict_noncausal");
  InterventionScenario s;
  s.antihypertensive = a_hyp;
  return predict(a, v, s, nullptr, horizon);
}

inline RiskEstimate predict_treatment_offset(const ModelArtifact& a, const VisitRecord& v, std::optional<int> a_hyp,
                                             double horizon = kDefaultHorizon) {
  detail::expect_variant(a, {Variant::treatment_offset}, "predict_treatment_offset");
  InterventionScenario s;
  s.antihypertensive = a_hyp;
  return predict(a, v, s, nullptr, horizon);
}

inline RiskEstimate predict_unexposed_mediator(const ModelArtifact& a, const VisitRecord& v,
                                               std::optional<int> a_hyp, double horizon = kDefaultHorizon) {
  detail::expect_variant(a, {Variant::unexposed_mediator}, "predict_unexposed_mediator");
  v.mediator("sbp_unexposed");
  InterventionScenario s;
  s.antihypertensive = a_hyp;
  return predict(a, v, s, nullptr, horizon);
}

inline RiskEstimate predict_mrf(const ModelArtifact& a, const VisitRecord& v, const InterventionScenario& s,
                                double horizon = kDefaultHorizon) {
  detail::expect_variant(a, {Variant::mrf, Variant::mrf_fix_sbp, Variant::mrf_fix_bmi, Variant::mrf_fix_nonhdl},
                         "predict_mrf");
  return predict(a, v, s, nullptr, horizon);
}

inline RiskEstimate predict_two_component(const ModelArtifact& a, const Anchor* anchor, const VisitRecord& v,
                                          const InterventionScenario& s, double horizon = kDefaultHorizon) {
  detail::expect_variant(a, {Variant::two_component}, "predict_two_component");
  return predict(a, v, s, anchor, horizon);
}

/// |PUI at visit k under the scenario - factual risk at visit k+1|.
inline double sequential_consistency_gap(const ModelArtifact& a, const VisitRecord& visit_k,
                                         const VisitRecord& visit_k1, const InterventionScenario& s,
                                         const Anchor* anchor = nullptr, double horizon = kDefaultHorizon) {
  const double pui = predict(a, visit_k, s, anchor, horizon).risk;
  InterventionScenario factual;
  factual.label = "factual";
  const double fact = predict(a, visit_k1, factual, anchor, horizon).risk;
  return std::abs(pui - fact);
}

inline void to_json(nlohmann::json& j, const VisitRecord& v) {
  j = {{"patient_id", v.patient_id},
       {"time", v.time},
       {"m", v.m},
       {"z", v.z},
       {"a", {{"statin", v.statin}, {"antihypertensive", v.antihypertensive}}}};
}

namespace detail {

inline int status_field(const nlohmann::json& j, const char* key) {
  const auto& x = j.at(key);
  if (x.is_boolean()) return x.get<bool>() ? 1 : 0;
  const double d = x.get<double>();
  if (d != 0.0 && d != 1.0) throw ValidationError(std::string(key) + " must be 0 or 1");
  return static_cast<int>(d);
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, VisitRecord& v) {
  if (!j.is_object()) throw ValidationError("visit must be a JSON object");
  v = VisitRecord{};
  v.patient_id = j.value("patient_id", std::string());
  v.time = j.value("time", 0.0);
  v.m = j.value("m", std::map<std::string, double>{});
  v.z = j.value("z", std::map<std::string, double>{});
  if (j.contains("a")) {
    const auto& a = j.at("a");
    if (a.contains("statin")) v.statin = detail::status_field(a, "statin");
    if (a.contains("antihypertensive")) v.antihypertensive = detail::status_field(a, "antihypertensive");
  }
  v.validate();
}

inline void to_json(nlohmann::json& j, const Anchor& a) {
  j = {{"patient_id", a.patient_id},
       {"time", a.time},
       {"m", a.m},
       {"a", {{"statin", a.statin}, {"antihypertensive", a.antihypertensive}}}};
}

inline void from_json(const nlohmann::json& j, Anchor& a) {
  a = Anchor{};
  a.patient_id = j.at("patient_id").get<std::string>();
  a.time = j.value("time", 0.0);
  a.m = j.at("m").get<std::map<std::string, double>>();
  if (j.contains("a")) {
    const auto& s = j.at("a");
    if (s.contains("statin")) a.statin = detail::status_field(s, "statin");
    if (s.contains("antihypertensive")) a.antihypertensive = detail::status_field(s, "antihypertensive");
  }
}

inline void to_json(nlohmann::json& j, const InterventionScenario& s) {
  j = {{"label", s.label},
       {"deltas", s.spec.deltas},
       {"direct_outcome_effect", s.spec.direct_outcome_effect},
       {"achieved", s.achieved}};
  nlohmann::json t = nlohmann::json::object();
  if (s.statin) t["statin"] = *s.statin;
  if (s.antihypertensive) t["antihypertensive"] = *s.antihypertensive;
  j["treatment"] = t;
}

inline void from_json(const nlohmann::json& j, InterventionScenario& s) {
  if (!j.is_object()) throw ValidationError("scenario must be a JSON object");
  s = InterventionScenario{};
  s.label = j.value("label", std::string());
  s.spec.name = s.label;
  s.spec.deltas = j.value("deltas", std::map<std::string, double>{});
  s.spec.direct_outcome_effect = j.value("direct_outcome_effect", 0.0);
  s.achieved = j.value("achieved", false);
  if (j.contains("treatment")) {
    const auto& t = j.at("treatment");
    if (t.contains("statin")) s.statin = detail::status_field(t, "statin");
    if (t.contains("antihypertensive")) s.antihypertensive = detail::status_field(t, "antihypertensive");
  }
}

inline void to_json(nlohmann::json& j, const RiskEstimate& r) {
  j = {{"risk", r.risk},
       {"horizon", r.horizon},
       {"variant", to_string(r.variant)},
       {"label", r.label},
       {"components",
        {{"baseline_risk", r.baseline_risk},
         {"log_multiplier", r.log_multiplier},
         {"combination", to_string(r.combination)}}}};
}

}  // namespace pui
