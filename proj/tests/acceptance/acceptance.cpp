// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pui/pui.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void run(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [ok, detail] = body();
    report(name, ok, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Brute-force Breslow partial log-likelihood over the risk sets of a design.
double loglik_oracle(const pui::Design& d, const Eigen::VectorXd& beta) {
  const auto n = d.n();
  std::vector<double> eta(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double e = d.offset(i);
    for (Eigen::Index j = 0; j < d.p(); ++j) e += d.x(i, j) * beta(j);
    eta[static_cast<std::size_t>(i)] = e;
  }
  double ll = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!d.event[static_cast<std::size_t>(i)]) continue;
    const double t = d.tstop[static_cast<std::size_t>(i)];
    double s = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (d.tstart[static_cast<std::size_t>(k)] < t && t <= d.tstop[static_cast<std::size_t>(k)])
        s += std::exp(eta[static_cast<std::size_t>(k)]);
    ll += eta[static_cast<std::size_t>(i)] - std::log(s);
  }
  return ll;
}

std::vector<pui::CohortRow> random_rows(std::mt19937_64& rng, int n, int p, bool ties, bool truncation) {
  std::normal_distribution<double> z(0, 1);
  std::exponential_distribution<double> ex(0.1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<pui::CohortRow> rows;
  for (int i = 0; i < n; ++i) {
    pui::CohortRow r;
    r.subject_id = std::to_string(i);
    double lp = 0;
    for (int j = 0; j < p; ++j) {
      const double x = z(rng);
      r.covariates["x" + std::to_string(j)] = x;
      lp += 0.4 * x;
    }
    double t = ex(rng) / std::exp(lp), c = ex(rng);
    if (ties) t = std::ceil(t * 10) / 10, c = std::ceil(c * 10) / 10;
    r.tstop = std::min(t, c);
    r.event = t <= c;
    r.tstart = truncation ? 0.5 * u(rng) * r.tstop : 0.0;
    r.offset = 0.3 * z(rng);
    rows.push_back(std::move(r));
  }
  return rows;
}

double c_index_oracle(const std::vector<pui::EvalPair>& p) {
  double num = 0, den = 0;
  for (const auto& a : p)
    for (const auto& b : p) {
      if (!a.event || !(a.time < b.time)) continue;
      den += 1;
      num += a.predicted_risk > b.predicted_risk ? 1.0 : a.predicted_risk == b.predicted_risk ? 0.5 : 0.0;
    }
  return num / den;
}

struct Cohort {
  std::vector<pui::SimSubject> sim;
  std::vector<pui::Subject> subjects;
  std::map<std::string, pui::SubjectTimeline> timelines;
};

Cohort make_cohort(const pui::SimConfig& c) {
  Cohort out;
  out.sim = pui::simulate_cohort(c);
  out.subjects = pui::cohort_subjects(out.sim);
  out.timelines = pui::cohort_timelines(out.sim);
  return out;
}

pui::VisitRecord jane(double sbp, int ah) {
  pui::VisitRecord v;
  v.patient_id = "jane";
  v.m = {{"sbp", sbp}, {"sbp_unexposed", sbp + 10.0 * ah}, {"bmi", 30}, {"nonhdl", 4.5}};
  v.z = {{"age", 65}, {"sex", 0}, {"diabetes", 1}, {"smoker", 0}};
  v.antihypertensive = ah;
  return v;
}

}  // namespace

int main() {
  run("gradient_check", [] {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> z(0, 0.4);
    double worst = 0, worst_ll = 0;
    for (int rep = 0; rep < 50; ++rep) {
      const int n = 40 + static_cast<int>(rng() % 161), p = 1 + rep % 4;
      auto rows = random_rows(rng, n, p, rep % 3 == 0, rep % 2 == 1);
      pui::FormulaSpec f;
      for (int j = 0; j < p; ++j) f.linear.push_back("x" + std::to_string(j));
      const auto d = pui::build_design(rows, f);
      pui::PartialLikelihood pl(d);
      Eigen::VectorXd b(p);
      for (int j = 0; j < p; ++j) b(j) = z(rng);
      const auto ev = pl.evaluate(b);
      worst_ll = std::max(worst_ll, std::abs(ev.loglik - loglik_oracle(d, b)) / std::max(1.0, std::abs(ev.loglik)));
      const double h = 1e-5;
      for (int j = 0; j < p; ++j) {
        Eigen::VectorXd up = b, dn = b;
        up(j) += h;
        dn(j) -= h;
        const double fd = (loglik_oracle(d, up) - loglik_oracle(d, dn)) / (2 * h);
        worst = std::max(worst, std::abs(ev.gradient(j) - fd) / std::max(1.0, std::abs(fd)));
      }
    }
    const double secs = seconds_since(t0);
    return std::pair{worst <= 1e-6 && worst_ll <= 1e-12 && secs < 10,
                     fmt("max rel score error %.2e, max rel loglik error %.2e over 50 datasets, %.2f s", worst,
                         worst_ll, secs)};
  });

  run("breslow_equals_nelson_aalen", [] {
    std::mt19937_64 rng(99);
    auto rows = random_rows(rng, 1000, 0, true, false);
    for (auto& r : rows) r.offset = 0.0;
    const auto t0 = Clock::now();
    const auto fit = pui::fit_cox(rows, pui::FormulaSpec{});
    const double secs = seconds_since(t0);
    std::vector<double> times;
    for (const auto& r : rows)
      if (r.event) times.push_back(r.tstop);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    double max_stop = 0;
    for (const auto& r : rows) max_stop = std::max(max_stop, r.tstop);
    // (0, 0), one point per event time, then (max stop, H) when follow-up runs past the last event
    const std::size_t expect = times.size() + 1 + (max_stop > times.back());
    bool exact = fit.baseline_cumhaz.size() == expect;
    double h = 0;
    for (std::size_t k = 0; exact && k < times.size(); ++k) {
      double dk = 0, at_risk = 0;
      for (const auto& r : rows) {
        at_risk += r.tstart < times[k] && r.tstop >= times[k];
        dk += r.event && r.tstop == times[k];
      }
      h += dk / at_risk;
      exact = fit.baseline_cumhaz[k + 1].first == times[k] && fit.baseline_cumhaz[k + 1].second == h;
    }
    exact = exact && fit.baseline_cumhaz.front() == std::pair{0.0, 0.0} && fit.baseline_cumhaz.back().first == max_stop &&
            fit.baseline_cumhaz.back().second == h;
    return std::pair{exact && secs < 1, fmt("%.0f distinct event times (tied), exact=%.0f, %.3f s",
                                            static_cast<double>(times.size()), exact, secs)};
  });

  run("counterfactual_oracle", [] {
    pui::SimConfig c;
    c.n = 10000;
    c.seed = 77;
    const auto sim = pui::simulate_cohort(c);
    const auto [kt, kh] = pui::true_baseline_cumhaz(c);
    const pui::CumulativeHazard h0(kt, kh, pui::CumulativeHazard::Shape::linear);
    pui::EffectConstants k;
    k.b_stat = c.b_stat;
    k.b_ah = c.b_ah;
    const auto t0 = Clock::now();
    double worst = 0;
    std::size_t multi = 0;
    for (const auto& s : sim) {
      const auto seg = pui::subject_segments(s.timeline);
      multi += seg.size() >= 3;
      const auto h = h0.scaled(std::exp(s.lp));
      for (auto [mode, regime] : {std::pair{pui::OffsetMode::absolute, pui::Regime::never_treated},
                                  std::pair{pui::OffsetMode::relative, pui::Regime::current_strategy}}) {
        const auto path = pui::make_hazard_path(h, seg, k, mode, s.subject.time, s.subject.event);
        const double t = pui::cf_survival_time(path, c.followup).t;
        worst = std::max(worst, std::abs(t - pui::oracle_cf_time(c, s, regime).first));
      }
    }
    const double secs = seconds_since(t0);
    return std::pair{worst <= 1e-6 && secs < 30 && multi > 100,
                     fmt("max |dt| %.2e days over 10000 subjects x 2 strategies (%.0f with >= 2 switches), %.2f s",
                         worst, static_cast<double>(multi), secs)};
  });

  run("coefficient_recovery", [] {
    pui::SimConfig c;
    c.n = 20000;
    c.seed = 5;
    c.risk_sbp = pui::RiskSbpSource::measured;
    const auto co = make_cohort(c);
    const auto t0 = Clock::now();
    const auto a = pui::fit_variant(pui::Variant::treatment_offset, co.subjects, co.timelines);
    const double secs = seconds_since(t0);
    const std::map<std::string, double> truth{{"age", c.beta_age},       {"sex", c.beta_sex},
                                              {"diabetes", c.beta_diabetes}, {"smoker", c.beta_smoker},
                                              {"sbp", c.beta_sbp},       {"bmi", c.beta_bmi},
                                              {"nonhdl", c.beta_nonhdl}};
    double worst = 0;
    std::string worst_col;
    for (const auto& col : a.fit.columns) {
      auto it = truth.find(col);
      const double z = std::abs(a.fit.coefficient(col) - (it == truth.end() ? 0.0 : it->second)) / a.fit.std_error(col);
      if (z > worst) worst = z, worst_col = col;
    }
    return std::pair{worst <= 3 && secs < 60 && a.constants.b_ah == -0.3245535,
                     fmt("%.0f coefficients, worst |z| %.2f, fit %.2f s", static_cast<double>(a.fit.columns.size()),
                         worst, secs) +
                         " (" + worst_col + ")"};
  });

  run("strategy_calibration", [] {
    pui::SimConfig c;
    c.n = 20000;
    c.seed = 1;
    c.risk_sbp = pui::RiskSbpSource::measured;
    const auto co = make_cohort(c);
    const auto a = pui::fit_variant(pui::Variant::treatment_offset, co.subjects, co.timelines);
    const auto r = pui::evaluate_under_strategy(a, co.subjects, co.timelines, pui::Strategy::never_treated, 3653);
    const auto f = pui::evaluate_under_strategy(a, co.subjects, co.timelines, pui::Strategy::factual, 3653);
    return std::pair{r.calibration.ici <= 0.01,
                     fmt("ICI %.4f under never_treated at 3653 days (factual times: %.4f), C %.3f", r.calibration.ici,
                         f.calibration.ici, r.c_index)};
  });

  run("coarse_mrf_vs_two_component_ordering", [] {
    int held = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      pui::SimConfig c;
      c.n = 20000;
      c.seed = seed;
      const pui::EffectConstants k;
      c.beta_sbp = k.b_sbp;
      c.beta_bmi = k.b_bmi;
      c.beta_nonhdl = k.b_nonhdl;
      const auto co = make_cohort(c);
      pui::EffectConstants coarse = k;
      coarse.b_sbp *= 2;
      coarse.b_bmi *= 2;
      coarse.b_nonhdl *= 2;
      const auto mrf = pui::fit_variant(pui::Variant::mrf, co.subjects, co.timelines, coarse);
      const auto tc = pui::fit_variant(pui::Variant::two_component, co.subjects, co.timelines, k);
      const auto rm = pui::evaluate_under_strategy(mrf, co.subjects, co.timelines, pui::Strategy::current_strategy);
      const auto rt = pui::evaluate_under_strategy(tc, co.subjects, co.timelines, pui::Strategy::current_strategy);
      const bool ok = rm.calibration.ici > rt.calibration.ici && rt.c_index >= rm.c_index - 0.005;
      held += ok;
      detail += fmt("[ICI %.4f>%.4f C %.4f/%.4f] ", rm.calibration.ici, rt.calibration.ici, rm.c_index, rt.c_index);
    }
    return std::pair{held == 5, std::to_string(held) + "/5 seeds (MRF vs two-component) " + detail};
  });

  run("sequential_consistency", [] {
    pui::SimConfig c;
    c.n = 20000;
    c.seed = 3;
    const auto co = make_cohort(c);
    std::map<pui::Variant, pui::ModelArtifact> m;
    for (auto v : {pui::Variant::treatment_offset, pui::Variant::unexposed_mediator, pui::Variant::two_component})
      m[v] = pui::fit_variant(v, co.subjects, co.timelines);
    pui::InterventionScenario start;
    start.label = "start antihypertensive";
    start.antihypertensive = 1;
    std::map<pui::Variant, double> worst;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> sbp(115, 190), age(40, 80);
    for (int k = 0; k < 200; ++k) {
      auto v0 = k == 0 ? jane(150, 0) : jane(sbp(rng), 0);
      if (k > 0) v0.z["age"] = age(rng);
      const auto anchor = pui::anchor_from_visit(v0);
      for (auto& [v, a] : m) {
        const auto v1 = pui::scenario_response_visit(a, v0, start);
        const double g = pui::sequential_consistency_gap(a, v0, v1, start, &anchor);
        worst[v] = k == 0 ? g : (v == pui::Variant::treatment_offset ? std::min(worst[v], g) : std::max(worst[v], g));
      }
    }
    const double um = worst[pui::Variant::unexposed_mediator], tc = worst[pui::Variant::two_component],
                 to = worst[pui::Variant::treatment_offset];
    return std::pair{um <= 1e-12 && tc <= 1e-12 && to > 0,
                     fmt("max gap unexposed_mediator %.1e, two_component %.1e; min gap treatment_offset %.2e "
                         "(200 profiles, antihypertensive start)",
                         um, tc, to)};
  });

  run("noncausal_reversal", [] {
    int reversed = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      pui::SimConfig c;
      c.n = 20000;
      c.seed = seed;
      const auto co = make_cohort(c);
      const auto a = pui::fit_variant(pui::Variant::noncausal, co.subjects, co.timelines);
      const double b = a.fit.coefficient("ah_baseline");
      reversed += (b > 0) != (c.b_ah > 0);
      detail += fmt("%+.3f ", b);
    }
    return std::pair{reversed >= 4, std::to_string(reversed) + "/5 seeds with sign opposite to the true effect " +
                                        fmt("%+.4f", -0.3245535) + "; coefficients " + detail};
  });

  run("dag_resolution", [] {
    pui::CausalDag worked({{"ah", pui::NodeKind::intervention},
                           {"sbp", pui::NodeKind::mediator},
                           {"cvd", pui::NodeKind::outcome}},
                          {{"ah", "sbp", -10.0}, {"sbp", "cvd", std::nullopt}}, {{"ah", std::log(0.8)}});
    const auto resolved = pui::resolve_direct_effects(worked);
    const double b = *resolved.find_edge("sbp", "cvd")->effect;
    const double want = std::log(0.8) / -10.0;
    const auto ko = pui::knock_on(pui::resolve_direct_effects(pui::default_dag(pui::EffectConstants{})),
                                  pui::InterventionSpec{"weight", {{"bmi", -5.0}}, 0.0});
    const bool ok = std::abs(b - want) <= 1e-12 && ko.at("sbp") == -3.5 && ko.at("nonhdl") == -0.522;
    return std::pair{ok, fmt("b_sbp %.15f (target %.15f); knock-on dSBP %.17g, dnonHDL %.17g", b, want, ko.at("sbp"),
                             ko.at("nonhdl"))};
  });

  run("c_index_oracle", [] {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 1);
    int exact = 0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t n = 2 + rng() % 49;
      std::vector<pui::EvalPair> p(n);
      for (auto& x : p) {
        x.predicted_risk = k % 2 ? std::round(u(rng) * 8) / 8 : u(rng);
        x.time = k % 3 ? 1 + std::floor(u(rng) * 10) : 1 + u(rng) * 10;
        x.event = u(rng) < 0.6;
      }
      p[0].event = true;
      p[0].time = 0.5;
      exact += pui::c_index(p) == c_index_oracle(p);
    }
    return std::pair{exact == 100, std::to_string(exact) + "/100 datasets identical to pairwise enumeration"};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
