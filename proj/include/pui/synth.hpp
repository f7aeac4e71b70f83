#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pui/csv.hpp"
#include "pui/error.hpp"
#include "pui/models.hpp"
#include "pui/timeline.hpp"

namespace pui {

/// Which SBP the true hazard reads. `unexposed` makes measured SBP a
/// treatment-distorted proxy (the confounded setting); `measured` makes the
/// treatment-offset model correctly specified.
enum class RiskSbpSource { unexposed, measured };

/// Data-generating process. Linear predictor terms are centred at the
/// covariate means so the baseline rates are those of an average subject.
struct SimConfig {
  std::size_t n = 5000;
  std::uint64_t seed = 1;
  double followup = 3653.0;

  // piecewise-constant baseline hazard per day, rates[k] from cuts[k]
  std::vector<double> rate_cuts{0.0, 1826.0};
  std::vector<double> rates{2.5e-5, 3.5e-5};
  double dropout_rate = 2e-5;  // exponential loss to follow-up, per day

  double age_mean = 55, age_sd = 10;
  double sbp_mean = 130, sbp_age_slope = 0.5, sbp_sd = 15;
  double bmi_mean = 27, bmi_sd = 4.5;
  double nonhdl_mean = 3.8, nonhdl_sd = 1.0;
  double p_sex = 0.5, p_diabetes = 0.1, p_smoker = 0.2;

  double beta_age = 0.06, beta_sex = 0.3, beta_diabetes = 0.6, beta_smoker = 0.5;
  double beta_sbp = 0.045, beta_bmi = 0.02, beta_nonhdl = 0.2;
  double b_stat = -0.3102413, b_ah = -0.3245535;
  RiskSbpSource risk_sbp = RiskSbpSource::unexposed;

  // baseline treatment: logistic(intercept + slope * (x - ref))
  double ah0_intercept = -1.5, ah0_slope = 0.08, ah_ref_sbp = 140;
  double stat0_intercept = -1.5, stat0_slope = 0.8;

  // drop-in at every decision time while off treatment; constant stopping
  double decision_interval = 365.0;
  double ah_init_intercept = -2.0, ah_init_slope = 0.06;
  double stat_init_intercept = -2.5, stat_init_slope = 0.5;
  double discontinue = 0.05;
  double sbp_response = -10.0;  // measured SBP shift while on antihypertensives

  void validate() const {
    if (n == 0) throw ValidationError("n must be positive");
    if (!(followup > 0)) throw ValidationError("followup must be positive");
    if (rate_cuts.empty() || rate_cuts.size() != rates.size() || rate_cuts.front() != 0.0)
      throw ValidationError("rate_cuts must start at 0 and match rates");
    for (std::size_t k = 0; k < rates.size(); ++k) {
      if (!(rates[k] > 0) || !std::isfinite(rates[k])) throw ValidationError("baseline rates must be positive");
      if (k > 0 && !(rate_cuts[k] > rate_cuts[k - 1])) throw ValidationError("rate_cuts must increase");
    }
    if (!(dropout_rate >= 0)) throw ValidationError("dropout_rate must be nonnegative");
    for (double p : {p_sex, p_diabetes, p_smoker, discontinue})
      if (!(p >= 0 && p <= 1)) throw ValidationError("probabilities must lie in [0, 1]");
    for (double s : {age_sd, sbp_sd, bmi_sd, nonhdl_sd})
      if (!(s >= 0)) throw ValidationError("standard deviations must be nonnegative");
    if (!(decision_interval > 0)) throw ValidationError("decision_interval must be positive");
  }
};

enum class Regime { factual, never_treated, current_strategy };

struct SimSubject {
  Subject subject;  // baseline covariates, factual time and event
  SubjectTimeline timeline;
  double lp = 0.0;      // true linear predictor, treatment excluded
  double latent = 0.0;  // -log U
  double t_cf_never = 0.0;
  double t_cf_current = 0.0;
};

namespace detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct HazardPiece {
  double start;
  double rate;  // includes exp(lp + treatment)
};

/// Piecewise-constant hazard of a subject under a treatment path; the last
/// piece runs to infinity.
inline std::vector<HazardPiece> hazard_pieces(const SimConfig& c, double lp,
                                              const std::vector<StatusSegment>& segments) {
  std::vector<double> cuts(c.rate_cuts);
  for (const auto& s : segments) cuts.push_back(s.start);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<HazardPiece> out;
  for (double t : cuts) {
    std::size_t k = 0;
    while (k + 1 < c.rate_cuts.size() && c.rate_cuts[k + 1] <= t) ++k;
    std::size_t j = 0;
    while (j + 1 < segments.size() && segments[j + 1].start <= t) ++j;
    const auto& s = segments[j];
    out.push_back({t, c.rates[k] * std::exp(lp + s.a_stat * c.b_stat + s.a_ah * c.b_ah)});
  }
  return out;
}

inline double accrued(const std::vector<HazardPiece>& p, double t) {
  double h = 0.0;
  for (std::size_t k = 0; k < p.size() && p[k].start < t; ++k) {
    const double end = k + 1 < p.size() ? std::min(p[k + 1].start, t) : t;
    h += p[k].rate * (end - p[k].start);
  }
  return h;
}

inline double invert(const std::vector<HazardPiece>& p, double target) {
  double h = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k + 1 < p.size()) {
      const double inc = p[k].rate * (p[k + 1].start - p[k].start);
      if (h + inc >= target) return p[k].start + (target - h) / p[k].rate;
      h += inc;
    } else {
      return p[k].start + (target - h) / p[k].rate;
    }
  }
  return std::numeric_limits<double>::infinity();
}

inline std::vector<TreatmentInterval> runs_to_intervals(const std::string& id, Drug d,
                                                        const std::vector<std::pair<double, int>>& runs, double end) {
  std::vector<TreatmentInterval> out;
  for (std::size_t k = 0; k < runs.size() && runs[k].first < end; ++k) {
    const double stop = k + 1 < runs.size() ? std::min(runs[k + 1].first, end) : end;
    if (!out.empty() && out.back().status == runs[k].second)
      out.back().end = stop;
    else
      out.push_back({id, d, runs[k].first, stop, runs[k].second});
  }
  return out;
}

inline std::vector<StatusSegment> regime_segments(const SimSubject& s, Regime r) {
  const auto factual = subject_segments(s.timeline);
  if (r == Regime::factual) return factual;
  StatusSegment only{0.0, s.subject.time, 0, 0, 0, 0};
  if (r == Regime::current_strategy) {
    only.a_stat = factual.front().a_stat;
    only.a_ah = factual.front().a_ah;
  }
  return {only};
}

}  // namespace detail

/// Closed-form counterfactual time: hazard accrued up to the factual time
/// along the observed treatment path, re-accrued under the regime's
/// constant treatment status. Capped at follow-up; event flag kept.
inline std::pair<double, bool> oracle_cf_time(const SimConfig& c, const SimSubject& s, Regime r) {
  const auto factual = detail::hazard_pieces(c, s.lp, detail::regime_segments(s, Regime::factual));
  const double target = detail::accrued(factual, s.subject.time);
  if (r == Regime::factual) return {s.subject.time, s.subject.event};
  const auto cf = detail::hazard_pieces(c, s.lp, detail::regime_segments(s, r));
  return {std::min(detail::invert(cf, target), c.followup), s.subject.event};
}

inline SimSubject simulate_subject(const SimConfig& c, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto bern = [&](double p) { return u(rng) < p ? 1 : 0; };

  SimSubject s;
  s.subject.id = std::to_string(index + 1);
  const double age = c.age_mean + c.age_sd * z(rng);
  const double sex = bern(c.p_sex), diabetes = bern(c.p_diabetes), smoker = bern(c.p_smoker);
  const double sbp_u = c.sbp_mean + c.sbp_age_slope * (age - c.age_mean) + c.sbp_sd * z(rng);
  const double bmi = c.bmi_mean + c.bmi_sd * z(rng);
  const double nonhdl = c.nonhdl_mean + c.nonhdl_sd * z(rng);
  const int ah0 = bern(detail::logistic(c.ah0_intercept + c.ah0_slope * (sbp_u - c.ah_ref_sbp)));
  const int stat0 = bern(detail::logistic(c.stat0_intercept + c.stat0_slope * (nonhdl - c.nonhdl_mean)));
  const double sbp = sbp_u + c.sbp_response * ah0;

  // Treatment path over the whole follow-up, decided before the outcome.
  std::vector<std::pair<double, int>> ah_runs{{0.0, ah0}}, stat_runs{{0.0, stat0}};
  for (double t = c.decision_interval; t < c.followup; t += c.decision_interval) {
    const int ah_now = ah_runs.back().second, st_now = stat_runs.back().second;
    const double sbp_now = sbp_u + c.sbp_response * ah_now;
    const int ah_next = ah_now ? (u(rng) < c.discontinue ? 0 : 1)
                               : bern(detail::logistic(c.ah_init_intercept + c.ah_init_slope * (sbp_now - c.ah_ref_sbp)));
    const int st_next =
        st_now ? (u(rng) < c.discontinue ? 0 : 1)
               : bern(detail::logistic(c.stat_init_intercept + c.stat_init_slope * (nonhdl - c.nonhdl_mean)));
    if (ah_next != ah_now) ah_runs.push_back({t, ah_next});
    if (st_next != st_now) stat_runs.push_back({t, st_next});
  }

  const double risk_sbp = c.risk_sbp == RiskSbpSource::unexposed ? sbp_u : sbp;
  s.lp = c.beta_age * (age - c.age_mean) + c.beta_sex * sex + c.beta_diabetes * diabetes + c.beta_smoker * smoker +
         c.beta_sbp * (risk_sbp - c.sbp_mean) + c.beta_bmi * (bmi - c.bmi_mean) +
         c.beta_nonhdl * (nonhdl - c.nonhdl_mean);
  s.latent = -std::log1p(-u(rng));
  const double dropout = c.dropout_rate > 0 ? -std::log1p(-u(rng)) / c.dropout_rate
                                            : std::numeric_limits<double>::infinity();

  SubjectTimeline full{detail::runs_to_intervals(s.subject.id, Drug::statin, stat_runs, c.followup),
                       detail::runs_to_intervals(s.subject.id, Drug::antihypertensive, ah_runs, c.followup)};
  const auto pieces = detail::hazard_pieces(c, s.lp, subject_segments(full));
  const double t_event = detail::invert(pieces, s.latent);
  const double censor = std::min(dropout, c.followup);
  s.subject.event = t_event <= censor;
  s.subject.time = s.subject.event ? t_event : censor;
  s.subject.covariates = {{"age", age},   {"sex", sex},         {"diabetes", diabetes}, {"smoker", smoker},
                          {"sbp", sbp},   {"sbp_unexposed", sbp_u}, {"bmi", bmi},      {"nonhdl", nonhdl}};
  s.timeline = {detail::runs_to_intervals(s.subject.id, Drug::statin, stat_runs, s.subject.time),
                detail::runs_to_intervals(s.subject.id, Drug::antihypertensive, ah_runs, s.subject.time)};
  s.t_cf_never = oracle_cf_time(c, s, Regime::never_treated).first;
  s.t_cf_current = oracle_cf_time(c, s, Regime::current_strategy).first;
  return s;
}

inline std::vector<SimSubject> simulate_cohort(const SimConfig& c) {
  c.validate();
  std::vector<SimSubject> out;
  out.reserve(c.n);
  for (std::size_t i = 0; i < c.n; ++i) out.push_back(simulate_subject(c, i));
  return out;
}

/// True cumulative baseline hazard (average subject), as knots for the
/// counterfactual engine.
inline std::pair<std::vector<double>, std::vector<double>> true_baseline_cumhaz(const SimConfig& c) {
  std::vector<double> t, h{0.0};
  for (double cut : c.rate_cuts)
    if (cut < c.followup) t.push_back(cut);
  t.push_back(c.followup);
  for (std::size_t k = 0; k + 1 < t.size(); ++k) h.push_back(h.back() + c.rates[k] * (t[k + 1] - t[k]));
  return {t, h};
}

inline std::vector<Subject> cohort_subjects(const std::vector<SimSubject>& sim) {
  std::vector<Subject> out;
  out.reserve(sim.size());
  for (const auto& s : sim) out.push_back(s.subject);
  return out;
}

inline std::map<std::string, SubjectTimeline> cohort_timelines(const std::vector<SimSubject>& sim) {
  std::map<std::string, SubjectTimeline> out;
  for (const auto& s : sim) out[s.subject.id] = s.timeline;
  return out;
}

inline csv::Table timelines_table(const std::vector<SimSubject>& sim) {
  std::vector<TreatmentInterval> all;
  for (const auto& s : sim) {
    all.insert(all.end(), s.timeline.statin.begin(), s.timeline.statin.end());
    all.insert(all.end(), s.timeline.ah.begin(), s.timeline.ah.end());
  }
  return timelines_to_table(all);
}

inline csv::Table truth_table(const std::vector<SimSubject>& sim) {
  csv::Table t;
  t.header = {"subject_id", "t_factual", "event", "t_cf_never", "t_cf_current"};
  for (const auto& s : sim)
    t.rows.push_back({s.subject.id, csv::format_double(s.subject.time), s.subject.event ? "1" : "0",
                      csv::format_double(s.t_cf_never), csv::format_double(s.t_cf_current)});
  return t;
}

inline std::string to_string(RiskSbpSource s) { return s == RiskSbpSource::measured ? "measured" : "unexposed"; }

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"n", c.n},
       {"seed", c.seed},
       {"followup", c.followup},
       {"rate_cuts", c.rate_cuts},
       {"rates", c.rates},
       {"dropout_rate", c.dropout_rate},
       {"beta", {{"age", c.beta_age}, {"sex", c.beta_sex}, {"diabetes", c.beta_diabetes}, {"smoker", c.beta_smoker},
                 {"sbp", c.beta_sbp}, {"bmi", c.beta_bmi}, {"nonhdl", c.beta_nonhdl}}},
       {"b_stat", c.b_stat},
       {"b_ah", c.b_ah},
       {"risk_sbp_source", to_string(c.risk_sbp)},
       {"decision_interval", c.decision_interval},
       {"discontinue", c.discontinue},
       {"sbp_response", c.sbp_response}};
}

/// Reads the keys written by to_json; anything absent keeps its default.
inline void from_json(const nlohmann::json& j, SimConfig& c) {
  if (!j.is_object()) throw ValidationError("simulation config must be a JSON object");
  c = SimConfig{};
  c.n = j.value("n", c.n);
  c.seed = j.value("seed", c.seed);
  c.followup = j.value("followup", c.followup);
  c.rate_cuts = j.value("rate_cuts", c.rate_cuts);
  c.rates = j.value("rates", c.rates);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  if (j.contains("beta")) {
    const auto& b = j.at("beta");
    c.beta_age = b.value("age", c.beta_age);
    c.beta_sex = b.value("sex", c.beta_sex);
    c.beta_diabetes = b.value("diabetes", c.beta_diabetes);
    c.beta_smoker = b.value("smoker", c.beta_smoker);
    c.beta_sbp = b.value("sbp", c.beta_sbp);
    c.beta_bmi = b.value("bmi", c.beta_bmi);
    c.beta_nonhdl = b.value("nonhdl", c.beta_nonhdl);
  }
  c.b_stat = j.value("b_stat", c.b_stat);
  c.b_ah = j.value("b_ah", c.b_ah);
  const std::string src = j.value("risk_sbp_source", std::string("unexposed"));
  if (src == "measured")
    c.risk_sbp = RiskSbpSource::measured;
  else if (src == "unexposed")
    c.risk_sbp = RiskSbpSource::unexposed;
  else
    throw ValidationError("risk_sbp_source must be 'unexposed' or 'measured'");
  c.decision_interval = j.value("decision_interval", c.decision_interval);
  c.discontinue = j.value("discontinue", c.discontinue);
  c.sbp_response = j.value("sbp_response", c.sbp_response);
  c.validate();
}

}  // namespace pui
