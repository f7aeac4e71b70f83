#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pui/counterfactual.hpp"
#include "pui/cox.hpp"
#include "pui/error.hpp"
#include "pui/models.hpp"
#include "pui/spline.hpp"

namespace pui {

struct EvalPair {
  double predicted_risk = 0.0;
  double time = 0.0;
  bool event = false;
};

inline void validate_pairs(const std::vector<EvalPair>& pairs) {
  for (const auto& p : pairs) {
    if (!(p.time > 0.0) || !std::isfinite(p.time)) throw ValidationError("evaluation times must be positive");
    if (!std::isfinite(p.predicted_risk)) throw ValidationError("non-finite predicted risk");
  }
}

/// Harrell's C. A pair is comparable when the shorter time is an event and
/// strictly shorter; equal predictions score one half. O(n log n) using a
/// Fenwick tree over prediction ranks.
inline double c_index(const std::vector<EvalPair>& pairs) {
  validate_pairs(pairs);
  const std::size_t n = pairs.size();
  std::vector<double> preds(n);
  for (std::size_t i = 0; i < n; ++i) preds[i] = pairs[i].predicted_risk;
  std::sort(preds.begin(), preds.end());
  preds.erase(std::unique(preds.begin(), preds.end()), preds.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i)
    rank[i] = static_cast<std::size_t>(std::lower_bound(preds.begin(), preds.end(), pairs[i].predicted_risk) -
                                       preds.begin()) + 1;

  std::vector<std::uint64_t> tree(preds.size() + 1, 0);
  auto add = [&](std::size_t r) {
    for (; r < tree.size(); r += r & (~r + 1)) ++tree[r];
  };
  auto prefix = [&](std::size_t r) {
    std::uint64_t s = 0;
    for (; r > 0; r -= r & (~r + 1)) s += tree[r];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pairs[a].time > pairs[b].time; });
  std::uint64_t half_units = 0, comparable = 0, inserted = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t h = g;
    while (h < n && pairs[order[h]].time == pairs[order[g]].time) ++h;
    for (std::size_t k = g; k < h; ++k) {
      const std::size_t i = order[k];
      if (!pairs[i].event) continue;
      const std::uint64_t below = prefix(rank[i] - 1), at = prefix(rank[i]) - below;
      half_units += 2 * below + at;
      comparable += inserted;
    }
    for (std::size_t k = g; k < h; ++k) add(rank[order[k]]);
    inserted += h - g;
    g = h;
  }
  if (comparable == 0) throw ValidationError("no comparable pairs");
  return static_cast<double>(half_units) / static_cast<double>(2 * comparable);
}

struct CalibrationReport {
  double ici = 0.0;
  double e50 = 0.0;
  double e90 = 0.0;
  std::vector<std::pair<double, double>> curve;  // (predicted, smoothed observed)
  std::size_t n = 0;
  bool intercept_only = false;  // degenerate predictions: smoother had no slope
  std::vector<double> smoothed;   // per subject
};

/// ICI, E50 and E90 of |predicted - smoothed|.
inline void calibration_metrics(const std::vector<double>& predicted, const std::vector<double>& smoothed,
                                CalibrationReport& r) {
  if (predicted.size() != smoothed.size() || predicted.empty())
    throw ValidationError("calibration needs matching, non-empty predictions");
  std::vector<double> diff(predicted.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::abs(predicted[i] - smoothed[i]);
  r.ici = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(diff.size());
  r.e50 = quantile(diff, 0.5);
  r.e90 = quantile(diff, 0.9);
  r.n = diff.size();
}

inline double cloglog(double p) { return std::log(-std::log1p(-p)); }

/// Proportional-hazards calibration: a Cox model of the outcome on a 4-knot
/// restricted cubic spline of cloglog(predicted) gives the smoothed observed
/// risk at `horizon` for every subject.
inline CalibrationReport calibration_smooth(const std::vector<EvalPair>& pairs, double horizon,
                                            std::size_t curve_points = 100) {
  validate_pairs(pairs);
  if (pairs.empty()) throw ValidationError("calibration needs at least one subject");
  std::vector<double> pred(pairs.size()), x(pairs.size());
  std::vector<CohortRow> rows(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double p = pairs[i].predicted_risk;
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("calibration needs predicted risks in (0, 1)");
    pred[i] = p;
    x[i] = cloglog(p);
    rows[i].subject_id = std::to_string(i);
    rows[i].tstart = 0.0;
    rows[i].tstop = pairs[i].time;
    rows[i].event = pairs[i].event;
    rows[i].covariates["x"] = x[i];
  }

  CalibrationReport r;
  std::optional<CoxFit> fit;
  FormulaSpec f;
  f.splines.push_back({"x", {}, 4});
  try {
    fit = fit_cox(rows, f);
  } catch (const InvalidSpecError&) {
  } catch (const RankDeficiencyError&) {
  }
  if (!fit) {
    fit = fit_cox(rows, FormulaSpec{});
    r.intercept_only = true;
  }
  const double h0 = fit->cumhaz(horizon);
  auto smooth_at = [&](double xv) {
    const double lp = r.intercept_only ? 0.0 : fit->linear_predictor({{"x", xv}});
    return -std::expm1(-h0 * std::exp(lp));
  };
  r.smoothed.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) r.smoothed[i] = smooth_at(x[i]);
  calibration_metrics(pred, r.smoothed, r);

  const auto [lo, hi] = std::minmax_element(pred.begin(), pred.end());
  const std::size_t k = *lo == *hi ? 1 : std::max<std::size_t>(curve_points, 2);
  for (std::size_t j = 0; j < k; ++j) {
    const double p = k == 1 ? *lo : *lo + (*hi - *lo) * static_cast<double>(j) / static_cast<double>(k - 1);
    r.curve.emplace_back(p, smooth_at(cloglog(p)));
  }
  return r;
}

struct Interval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap. Resample indices are drawn up front from `seed`,
/// so the result does not depend on how resamples are scheduled.
inline Interval bootstrap(const std::vector<EvalPair>& pairs,
                          const std::function<double(const std::vector<EvalPair>&)>& statistic,
                          std::size_t resamples = 200, std::uint64_t seed = 1, double level = 0.95,
                          unsigned threads = 0) {
  if (pairs.empty()) throw ValidationError("bootstrap needs data");
  if (!(level > 0 && level < 1)) throw ValidationError("confidence level must lie in (0, 1)");
  Interval out;
  out.estimate = statistic(pairs);
  if (resamples == 0) {
    out.lower = out.upper = out.estimate;
    return out;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::vector<std::vector<std::size_t>> draws(resamples, std::vector<std::size_t>(pairs.size()));
  for (auto& d : draws)
    for (auto& i : d) i = pick(rng);

  std::vector<double> stats(resamples, std::numeric_limits<double>::quiet_NaN());
  auto work = [&](std::size_t first, std::size_t step) {
    std::vector<EvalPair> sample(pairs.size());
    for (std::size_t b = first; b < resamples; b += step) {
      for (std::size_t i = 0; i < sample.size(); ++i) sample[i] = pairs[draws[b][i]];
      try {
        stats[b] = statistic(sample);
      } catch (const Error&) {
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(resamples));
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  std::vector<double> ok;
  for (double s : stats)
    if (std::isfinite(s)) ok.push_back(s);
  if (ok.empty()) throw Error("every bootstrap resample failed");
  out.lower = quantile(ok, (1 - level) / 2);
  out.upper = quantile(ok, 1 - (1 - level) / 2);
  return out;
}

enum class Strategy { factual, never_treated, current_strategy };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::never_treated: return "never_treated";
    case Strategy::current_strategy: return "current_strategy";
    default: return "factual";
  }
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "factual") return Strategy::factual;
  if (s == "never_treated") return Strategy::never_treated;
  if (s == "current_strategy") return Strategy::current_strategy;
  throw ValidationError("unknown strategy '" + s + "'");
}

/// Absolute-offset variants predict under no treatment; relative-offset
/// variants under the current strategy. Factual evaluation fits any.
inline void check_strategy(Variant v, Strategy s) {
  if (s == Strategy::factual) return;
  const auto mode = treatment_offset_mode(v);
  const bool ok = (s == Strategy::never_treated && mode == OffsetMode::absolute) ||
                  (s == Strategy::current_strategy && mode == OffsetMode::relative);
  if (!ok)
    throw VariantMismatchError("a " + to_string(v) + " model cannot be evaluated under " + to_string(s));
}

inline CumulativeHazard baseline_hazard(const CoxFit& fit) {
  std::vector<double> t, h;
  for (const auto& [a, b] : fit.baseline_cumhaz) {
    t.push_back(a);
    h.push_back(b);
  }
  if (t.empty()) throw ValidationError("fit has no baseline hazard");
  return CumulativeHazard(std::move(t), std::move(h), CumulativeHazard::Shape::step);
}

/// Time-zero linear predictor of a subject: free covariates plus, for the
/// MRF family, the clipped risk-factor offset. Treatment offsets are zero at
/// baseline under both strategies.
inline double baseline_linear_predictor(const ModelArtifact& a, const Subject& s,
                                        const std::vector<StatusSegment>& segments) {
  auto cov = s.covariates;
  cov["ah_baseline"] = segments.front().a_ah;
  cov["statin_baseline"] = segments.front().a_stat;
  double lp = a.fit.linear_predictor(cov);
  if (is_mrf_family(a.variant))
    lp += mrf_offset(s.at("sbp"), s.at("bmi"), s.at("nonhdl"), a.constants, fixed_factors(a.variant));
  return lp;
}

struct EvaluationReport {
  Variant variant = Variant::noncausal;
  Strategy strategy = Strategy::factual;
  double horizon = kDefaultHorizon;
  double c_index = 0.0;
  CalibrationReport calibration;
  std::optional<Interval> c_index_ci, ici_ci, e50_ci, e90_ci;
  std::vector<EvalPair> pairs;
};

/// (prediction, time, event) for each subject, with times mapped to the
/// strategy's counterfactual scale.
inline std::vector<EvalPair> strategy_pairs(const ModelArtifact& a, const std::vector<Subject>& subjects,
                                            const std::map<std::string, SubjectTimeline>& timelines,
                                            Strategy strategy, double horizon) {
  check_strategy(a.variant, strategy);
  const double h0w = a.fit.cumhaz(horizon);
  const CumulativeHazard h0 = baseline_hazard(a.fit);
  const OffsetMode mode = strategy == Strategy::never_treated ? OffsetMode::absolute : OffsetMode::relative;
  std::vector<EvalPair> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) {
    const auto seg = segments_for(s, timelines);
    const double lp = baseline_linear_predictor(a, s, seg);
    EvalPair p{-std::expm1(-h0w * std::exp(lp)), s.time, s.event};
    if (strategy != Strategy::factual) {
      const auto path = make_hazard_path(h0.scaled(std::exp(lp)), seg, a.constants, mode, s.time, s.event);
      const auto cf = cf_survival_time(path, a.fit.max_time());
      p.time = cf.t;
      p.event = cf.event;
    }
    out.push_back(p);
  }
  return out;
}

inline EvaluationReport evaluate_under_strategy(const ModelArtifact& a, const std::vector<Subject>& subjects,
                                                const std::map<std::string, SubjectTimeline>& timelines,
                                                Strategy strategy, double horizon = kDefaultHorizon,
                                                std::size_t resamples = 0, std::uint64_t seed = 1) {
  EvaluationReport r;
  r.variant = a.variant;
  r.strategy = strategy;
  r.horizon = horizon;
  r.pairs = strategy_pairs(a, subjects, timelines, strategy, horizon);
  r.c_index = c_index(r.pairs);
  r.calibration = calibration_smooth(r.pairs, horizon);
  if (resamples > 0) {
    r.c_index_ci = bootstrap(r.pairs, c_index, resamples, seed);
    r.c_index_ci->estimate = r.c_index;
    auto metric = [horizon](double CalibrationReport::*field) {
      return [horizon, field](const std::vector<EvalPair>& p) { return calibration_smooth(p, horizon, 2).*field; };
    };
    r.ici_ci = bootstrap(r.pairs, metric(&CalibrationReport::ici), resamples, seed);
    r.e50_ci = bootstrap(r.pairs, metric(&CalibrationReport::e50), resamples, seed);
    r.e90_ci = bootstrap(r.pairs, metric(&CalibrationReport::e90), resamples, seed);
  }
  return r;
}

inline nlohmann::json interval_json(const std::optional<Interval>& i) {
  if (!i) return nullptr;
  return {{"estimate", i->estimate}, {"lower", i->lower}, {"upper", i->upper}};
}

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = {{"variant", to_string(r.variant)},
       {"strategy", to_string(r.strategy)},
       {"horizon", r.horizon},
       {"n", r.calibration.n},
       {"c_index", r.c_index},
       {"ici", r.calibration.ici},
       {"e50", r.calibration.e50},
       {"e90", r.calibration.e90},
       {"intercept_only_smoother", r.calibration.intercept_only}};
  if (r.c_index_ci)
    j["bootstrap"] = {{"c_index", interval_json(r.c_index_ci)},
                      {"ici", interval_json(r.ici_ci)},
                      {"e50", interval_json(r.e50_ci)},
                      {"e90", interval_json(r.e90_ci)}};
}

inline csv::Table calibration_curve_table(const CalibrationReport& r) {
  csv::Table t;
  t.header = {"predicted", "smoothed"};
  for (const auto& [p, s] : r.curve) t.rows.push_back({csv::format_double(p), csv::format_double(s)});
  return t;
}

}  // namespace pui
