#include <gtest/gtest.h>

#include <random>

#include "pui/evaluation.hpp"
#include "pui/synth.hpp"

using pui::EvalPair;
using pui::Strategy;
using pui::Variant;

namespace {

double c_index_oracle(const std::vector<EvalPair>& p) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!p[i].event || !(p[i].time < p[j].time)) continue;
      den += 1;
      if (p[i].predicted_risk > p[j].predicted_risk)
        num += 1;
      else if (p[i].predicted_risk == p[j].predicted_risk)
        num += 0.5;
    }
  return num / den;
}

std::vector<EvalPair> random_pairs(std::mt19937_64& rng, std::size_t n, bool ties) {
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::uniform_int_distribution<int> coarse(1, 6);
  std::vector<EvalPair> out(n);
  for (auto& p : out) {
    p.predicted_risk = ties ? coarse(rng) / 10.0 : u(rng);
    p.time = ties ? coarse(rng) : u(rng) * 100;
    p.event = u(rng) < 0.6;
  }
  out.front().event = true;
  out.front().time = 0.5;
  return out;
}

}  // namespace

TEST(CIndex, PerfectAndReversedOrdering) {
  std::vector<EvalPair> p;
  for (int i = 1; i <= 20; ++i) p.push_back({1.0 / i, static_cast<double>(i), true});
  EXPECT_EQ(pui::c_index(p), 1.0);
  for (auto& x : p) x.predicted_risk = -x.predicted_risk;
  EXPECT_EQ(pui::c_index(p), 0.0);
  for (auto& x : p) x.predicted_risk = 0.3;
  EXPECT_EQ(pui::c_index(p), 0.5);
}

TEST(CIndex, MatchesQuadraticOracle) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    auto p = random_pairs(rng, 5 + k % 46, k % 2 == 1);
    EXPECT_NEAR(pui::c_index(p), c_index_oracle(p), 1e-12) << k;
  }
}

TEST(CIndex, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(12);
  auto p = random_pairs(rng, 300, false);
  const double c = pui::c_index(p);
  for (auto& x : p) x.predicted_risk = std::log(x.predicted_risk) * 3 + 7;
  EXPECT_EQ(pui::c_index(p), c);
}

TEST(CIndex, RejectsBadInput) {
  EXPECT_THROW(pui::c_index({{0.1, 0.0, true}}), pui::ValidationError);
  EXPECT_THROW(pui::c_index({{std::nan(""), 1.0, true}}), pui::ValidationError);
}

TEST(Calibration, ConstantShiftGivesShiftAsIci) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 0.5);
  std::vector<double> truth(5000), pred(5000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = u(rng);
    pred[i] = truth[i] + 0.02;
  }
  pui::CalibrationReport r;
  pui::calibration_metrics(pred, truth, r);
  EXPECT_NEAR(r.ici, 0.02, 1e-12);
  EXPECT_NEAR(r.e50, 0.02, 1e-12);
  EXPECT_NEAR(r.e90, 0.02, 1e-12);
}

TEST(Calibration, QuantilesOrdered) {
  std::mt19937_64 rng(3);
  auto p = random_pairs(rng, 800, false);
  auto r = pui::calibration_smooth(p, 50.0);
  EXPECT_LE(r.e50, r.e90);
  EXPECT_EQ(r.curve.size(), 100u);
  EXPECT_EQ(r.smoothed.size(), p.size());
  EXPECT_FALSE(r.intercept_only);
}

TEST(Calibration, DegeneratePredictionsFallBackToIntercept) {
  std::mt19937_64 rng(4);
  auto p = random_pairs(rng, 200, false);
  for (auto& x : p) x.predicted_risk = 0.2;
  auto r = pui::calibration_smooth(p, 50.0);
  EXPECT_TRUE(r.intercept_only);
  for (double s : r.smoothed) EXPECT_EQ(s, r.smoothed.front());
  p.front().predicted_risk = 1.0;
  EXPECT_THROW(pui::calibration_smooth(p, 50.0), pui::ValidationError);
}

TEST(Calibration, TrueRisksAreWellCalibrated) {
  pui::SimConfig c;
  c.n = 20000;
  c.seed = 31;
  c.b_stat = c.b_ah = 0.0;  // factual times then follow the time-zero linear predictor
  const auto sim = pui::simulate_cohort(c);
  const auto [kt, kh] = pui::true_baseline_cumhaz(c);
  const pui::CumulativeHazard h0(kt, kh, pui::CumulativeHazard::Shape::linear);
  std::vector<EvalPair> p;
  for (const auto& s : sim)
    p.push_back({-std::expm1(-h0.at(c.followup) * std::exp(s.lp)), s.subject.time, s.subject.event});
  auto r = pui::calibration_smooth(p, c.followup);
  EXPECT_LE(r.ici, 0.005);
  // shifting every prediction by 0.05 shows up in the ICI
  for (auto& x : p) x.predicted_risk = std::min(x.predicted_risk + 0.05, 0.999);
  EXPECT_GT(pui::calibration_smooth(p, c.followup).ici, 0.03);
}

TEST(Bootstrap, ReproducibleAcrossThreadCounts) {
  std::mt19937_64 rng(5);
  auto p = random_pairs(rng, 400, false);
  auto stat = [](const std::vector<EvalPair>& x) { return pui::c_index(x); };
  auto a = pui::bootstrap(p, stat, 64, 9, 0.95, 1);
  auto b = pui::bootstrap(p, stat, 64, 9, 0.95, 4);
  EXPECT_EQ(a.lower, b.lower);
  EXPECT_EQ(a.upper, b.upper);
  EXPECT_EQ(a.estimate, pui::c_index(p));
  EXPECT_LE(a.lower, a.estimate);
  EXPECT_GE(a.upper, a.estimate);
  auto c = pui::bootstrap(p, stat, 64, 10, 0.95, 1);
  EXPECT_NE(a.lower + a.upper, c.lower + c.upper);
}

TEST(Strategy, ParseAndCompatibility) {
  EXPECT_EQ(pui::parse_strategy("never_treated"), Strategy::never_treated);
  EXPECT_THROW(pui::parse_strategy("sometimes"), pui::ValidationError);
  EXPECT_THROW(pui::check_strategy(Variant::noncausal, Strategy::never_treated), pui::VariantMismatchError);
  EXPECT_THROW(pui::check_strategy(Variant::treatment_offset, Strategy::current_strategy),
               pui::VariantMismatchError);
  EXPECT_THROW(pui::check_strategy(Variant::mrf, Strategy::never_treated), pui::VariantMismatchError);
  EXPECT_NO_THROW(pui::check_strategy(Variant::unexposed_mediator, Strategy::never_treated));
  EXPECT_NO_THROW(pui::check_strategy(Variant::two_component, Strategy::current_strategy));
  EXPECT_NO_THROW(pui::check_strategy(Variant::noncausal, Strategy::factual));
}

TEST(Strategy, UntreatedSubjectsKeepFactualTimes) {
  pui::SimConfig c;
  c.n = 1500;
  c.seed = 13;
  const auto sim = pui::simulate_cohort(c);
  const auto subjects = pui::cohort_subjects(sim);
  const auto a = pui::fit_variant(Variant::treatment_offset, subjects, pui::cohort_timelines(sim));
  const std::map<std::string, pui::SubjectTimeline> none;
  const auto fact = pui::strategy_pairs(a, subjects, none, Strategy::factual, 3653);
  const auto never = pui::strategy_pairs(a, subjects, none, Strategy::never_treated, 3653);
  ASSERT_EQ(fact.size(), never.size());
  for (std::size_t i = 0; i < fact.size(); ++i) {
    EXPECT_EQ(fact[i].predicted_risk, never[i].predicted_risk);
    EXPECT_NEAR(fact[i].time, never[i].time, 1e-9 * fact[i].time);
    EXPECT_EQ(fact[i].event, never[i].event);
  }
}

TEST(Strategy, NeverTreatedTimesShortenForTreatedEvents) {
  pui::SimConfig c;
  c.n = 1500;
  c.seed = 14;
  const auto sim = pui::simulate_cohort(c);
  const auto subjects = pui::cohort_subjects(sim);
  const auto tl = pui::cohort_timelines(sim);
  const auto a = pui::fit_variant(Variant::treatment_offset, subjects, tl);
  const auto fact = pui::strategy_pairs(a, subjects, tl, Strategy::factual, 3653);
  const auto never = pui::strategy_pairs(a, subjects, tl, Strategy::never_treated, 3653);
  int shorter = 0;
  for (std::size_t i = 0; i < fact.size(); ++i) {
    EXPECT_LE(never[i].time, fact[i].time * (1 + 1e-12));
    shorter += never[i].time < fact[i].time;
  }
  EXPECT_GT(shorter, 50);
  auto report = pui::evaluate_under_strategy(a, subjects, tl, Strategy::never_treated, 3653, 20, 3);
  ASSERT_TRUE(report.ici_ci.has_value());
  EXPECT_LE(report.ici_ci->lower, report.ici_ci->upper);
  auto j = nlohmann::json(report);
  EXPECT_EQ(j["strategy"], "never_treated");
  EXPECT_EQ(j["n"], 1500);
}
