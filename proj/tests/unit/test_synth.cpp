#include <gtest/gtest.h>

#include <sstream>

#include "pui/counterfactual.hpp"
#include "pui/synth.hpp"

using pui::Regime;
using pui::SimConfig;

namespace {

std::string dump(const pui::csv::Table& t) {
  std::ostringstream os;
  pui::csv::write(os, t);
  return os.str();
}

SimConfig small(std::size_t n, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Simulate, DeterministicForSeed) {
  auto a = pui::simulate_cohort(small(300, 9)), b = pui::simulate_cohort(small(300, 9));
  EXPECT_EQ(dump(pui::subjects_to_table(pui::cohort_subjects(a))), dump(pui::subjects_to_table(pui::cohort_subjects(b))));
  EXPECT_EQ(dump(pui::timelines_table(a)), dump(pui::timelines_table(b)));
  EXPECT_EQ(dump(pui::truth_table(a)), dump(pui::truth_table(b)));
  auto c = pui::simulate_cohort(small(300, 10));
  EXPECT_NE(dump(pui::truth_table(a)), dump(pui::truth_table(c)));
}

TEST(Simulate, NullTreatmentEffectsLeaveTimesUnchanged) {
  auto c = small(500, 3);
  c.b_stat = c.b_ah = 0.0;
  for (const auto& s : pui::simulate_cohort(c)) {
    EXPECT_NEAR(s.t_cf_never, s.subject.time, 1e-9 * s.subject.time);
    EXPECT_NEAR(s.t_cf_current, s.subject.time, 1e-9 * s.subject.time);
  }
}

TEST(Simulate, ProtectiveTreatmentShortensNeverTreatedTimes) {
  int treated = 0;
  for (const auto& s : pui::simulate_cohort(small(2000, 4))) {
    EXPECT_LE(s.t_cf_never, s.subject.time * (1 + 1e-12));
    bool ever = false;
    for (const auto& iv : s.timeline.ah) ever = ever || iv.status == 1;
    for (const auto& iv : s.timeline.statin) ever = ever || iv.status == 1;
    if (ever && s.subject.event) {
      ++treated;
      EXPECT_LT(s.t_cf_never, s.subject.time);
    }
  }
  EXPECT_GT(treated, 10);
}

TEST(Simulate, TimelinesCoverFollowUpAndEventsRespectFollowUp) {
  auto c = small(1000, 5);
  for (const auto& s : pui::simulate_cohort(c)) {
    auto seg = pui::subject_segments(s.timeline);
    EXPECT_EQ(seg.front().start, 0.0);
    EXPECT_EQ(seg.back().end, s.subject.time);
    EXPECT_LE(s.subject.time, c.followup);
    EXPECT_LE(s.t_cf_never, c.followup);
  }
}

TEST(OracleCfTime, SingleStatinSwitch) {
  SimConfig c;
  c.rate_cuts = {0.0};
  c.rates = {0.01};
  c.followup = 20;
  pui::SimSubject s;
  s.subject = {"1", 10.0, true, {}};
  s.timeline.statin = {{"1", pui::Drug::statin, 0, 5, 0}, {"1", pui::Drug::statin, 5, 10, 1}};
  s.timeline.ah = {{"1", pui::Drug::antihypertensive, 0, 10, 0}};
  auto [t, ev] = pui::oracle_cf_time(c, s, Regime::never_treated);
  EXPECT_NEAR(t, 8.666349984123814, 1e-12);
  EXPECT_TRUE(ev);
  EXPECT_EQ(pui::oracle_cf_time(c, s, Regime::factual).first, 10.0);
  // baseline status was off, so staying on it is the same as never treating
  EXPECT_NEAR(pui::oracle_cf_time(c, s, Regime::current_strategy).first, t, 1e-12);
}

TEST(OracleCfTime, NoChangesGiveFactual) {
  SimConfig c = small(1, 1);
  pui::SimSubject s;
  s.subject = {"1", 1234.5, false, {}};
  s.lp = 0.3;
  s.timeline.statin = {{"1", pui::Drug::statin, 0, 1234.5, 0}};
  s.timeline.ah = {{"1", pui::Drug::antihypertensive, 0, 1234.5, 0}};
  EXPECT_NEAR(pui::oracle_cf_time(c, s, Regime::never_treated).first, 1234.5, 1e-9);
}

TEST(OracleCfTime, AgreesWithCounterfactualEngine) {
  auto c = small(2000, 6);
  const auto [kt, kh] = pui::true_baseline_cumhaz(c);
  pui::EffectConstants k;
  k.b_stat = c.b_stat;
  k.b_ah = c.b_ah;
  const pui::CumulativeHazard h0(kt, kh, pui::CumulativeHazard::Shape::linear);
  for (const auto& s : pui::simulate_cohort(c)) {
    const auto seg = pui::subject_segments(s.timeline);
    const auto h = h0.scaled(std::exp(s.lp));
    auto never = pui::make_hazard_path(h, seg, k, pui::OffsetMode::absolute, s.subject.time, s.subject.event);
    auto current = pui::make_hazard_path(h, seg, k, pui::OffsetMode::relative, s.subject.time, s.subject.event);
    EXPECT_NEAR(pui::cf_survival_time(never, c.followup).t, s.t_cf_never, 1e-6);
    EXPECT_NEAR(pui::cf_survival_time(current, c.followup).t, s.t_cf_current, 1e-6);
  }
}

TEST(Simulate, ConfoundingByIndication) {
  // SBP at baseline vs starting antihypertensives during follow-up
  auto sim = pui::simulate_cohort(small(4000, 7));
  std::vector<double> x, y;
  for (const auto& s : sim) {
    if (s.timeline.ah.front().status == 1) continue;
    x.push_back(s.subject.at("sbp"));
    y.push_back(s.timeline.ah.size() > 1 ? 1.0 : 0.0);
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.05);
}

TEST(Simulate, EventRateIncreasesWithBaselineRates) {
  double prev = -1;
  for (double scale : {0.5, 1.0, 2.0, 4.0}) {
    auto c = small(3000, 8);
    for (auto& r : c.rates) r *= scale;
    int events = 0;
    for (const auto& s : pui::simulate_cohort(c)) events += s.subject.event;
    EXPECT_GT(events, prev);
    prev = events;
  }
}

TEST(SimConfigJson, RoundTripAndValidation) {
  SimConfig c;
  c.n = 77;
  c.risk_sbp = pui::RiskSbpSource::measured;
  c.beta_sbp = 0.01;
  auto back = nlohmann::json(c).get<SimConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  EXPECT_THROW(nlohmann::json::parse(R"({"rates":[-1,1]})").get<SimConfig>(), pui::ValidationError);
  EXPECT_THROW(nlohmann::json::parse(R"({"risk_sbp_source":"x"})").get<SimConfig>(), pui::ValidationError);
}
