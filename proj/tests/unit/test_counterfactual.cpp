#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pui/counterfactual.hpp"

using pui::CumulativeHazard;
using pui::HazardPath;

namespace {

CumulativeHazard linear_h(double rate, double tmax) {
  return CumulativeHazard({0.0, tmax}, {0.0, rate * tmax}, CumulativeHazard::Shape::linear);
}

struct PiecewiseRates {
  std::vector<double> cuts;  // integer breakpoints, cuts[0] = 0
  std::vector<double> rate;  // rate on [cuts[k], cuts[k+1])
  double end;
};

PiecewiseRates random_rates(std::mt19937_64& rng, double end) {
  std::uniform_real_distribution<double> r(0.01, 0.2);
  PiecewiseRates p{{0.0}, {}, end};
  for (double c = 0; c < end;) {
    c += std::uniform_int_distribution<int>(1, 6)(rng);
    if (c < end) p.cuts.push_back(c);
    p.rate.push_back(r(rng));
  }
  p.rate.resize(p.cuts.size());
  return p;
}

CumulativeHazard to_hazard(const PiecewiseRates& p) {
  std::vector<double> t = p.cuts, v{0.0};
  t.push_back(p.end);
  for (std::size_t k = 0; k + 1 < t.size(); ++k) v.push_back(v.back() + p.rate[k] * (t[k + 1] - t[k]));
  return CumulativeHazard(t, v, CumulativeHazard::Shape::linear);
}

double rate_at(const PiecewiseRates& p, double t) {
  auto k = static_cast<std::size_t>(std::upper_bound(p.cuts.begin(), p.cuts.end(), t) - p.cuts.begin()) - 1;
  return p.rate[k];
}

// Brute-force: integrate on a fine grid (breakpoints are integers, so grid
// cells never straddle a rate change) and invert by walking the grid.
double grid_oracle(const PiecewiseRates& p, const HazardPath& path, double dt) {
  auto offset_at = [&](double t) {
    double o = 0.0;
    for (std::size_t i = 0; i < path.change_times.size(); ++i)
      if (t >= path.change_times[i]) o = path.offsets[i];
    return o;
  };
  double accrued = 0.0;
  const auto steps = static_cast<long>(std::llround(path.t_event / dt));
  for (long s = 0; s < steps; ++s) {
    const double mid = (static_cast<double>(s) + 0.5) * dt;
    double w = std::exp(offset_at(mid));
    if (path.change_times.empty() || mid < path.change_times.front()) w = 1.0;
    accrued += rate_at(p, mid) * w * dt;
  }
  double h = 0.0;
  for (long s = 0;; ++s) {
    const double t0 = static_cast<double>(s) * dt;
    if (t0 >= p.end) return p.end;
    const double inc = rate_at(p, t0 + 0.5 * dt) * dt;
    if (h + inc >= accrued) return t0 + (accrued - h) / inc * dt;
    h += inc;
  }
}

}  // namespace

TEST(CfCumhaz, ZeroOffsetsGiveFactualHazard) {
  HazardPath p{linear_h(0.01, 20), {0, 3, 7}, {0, 0, 0}, 10, true};
  EXPECT_EQ(pui::cf_cumhaz_at_event(p), p.H.at(10));
  HazardPath none{linear_h(0.01, 20), {}, {}, 10, true};
  EXPECT_EQ(pui::cf_cumhaz_at_event(none), p.H.at(10));
}

TEST(CfCumhaz, SingleStatinSwitch) {
  HazardPath p{linear_h(0.01, 20), {5}, {-0.3102413}, 10, true};
  EXPECT_NEAR(pui::cf_cumhaz_at_event(p), 0.08666349984123814, 1e-15);
  auto cf = pui::cf_survival_time(p);
  EXPECT_NEAR(cf.t, 8.666349984123814, 1e-12);
  EXPECT_TRUE(cf.event);
}

TEST(CfCumhaz, RejectsUnorderedChangeTimes) {
  HazardPath p{linear_h(0.01, 20), {5, 3}, {0.1, 0.2}, 10, true};
  EXPECT_THROW(pui::cf_cumhaz_at_event(p), pui::ValidationError);
  HazardPath late{linear_h(0.01, 20), {10}, {0.1}, 10, true};
  EXPECT_THROW(pui::cf_cumhaz_at_event(late), pui::ValidationError);
}

TEST(CfSurvivalTime, IdentityOnStepHazard) {
  CumulativeHazard h({0, 2, 5, 9, 12}, {0, 0.1, 0.25, 0.3, 0.5}, CumulativeHazard::Shape::step);
  for (double te : {1.0, 3.3, 5.0, 7.5, 11.9}) {
    HazardPath p{h, {0, 1}, {0, 0}, te, false};
    if (te <= 1.0) p = HazardPath{h, {0}, {0}, te, false};
    EXPECT_EQ(pui::cf_survival_time(p).t, te);
  }
}

TEST(CfSurvivalTime, StepInversionTakesLeftmostTime) {
  CumulativeHazard h({0, 2, 5, 9, 12}, {0, 0.1, 0.25, 0.3, 0.5}, CumulativeHazard::Shape::step);
  // accrued 0.25 * e^{-1} = 0.092, first time H >= 0.092 is 2
  HazardPath p{h, {0}, {-1.0}, 6.0, true};
  EXPECT_EQ(pui::cf_survival_time(p).t, 2.0);
  HazardPath up{h, {0}, {0.2}, 6.0, true};  // 0.25 e^{0.2} = 0.305 -> first H >= is 12
  EXPECT_EQ(pui::cf_survival_time(up, 20.0).t, 12.0);
}

TEST(CfSurvivalTime, CapAtMaximumFollowUp) {
  HazardPath p{linear_h(0.01, 10), {0}, {1.5}, 9, true};
  auto cf = pui::cf_survival_time(p, 10.0);
  EXPECT_EQ(cf.t, 10.0);
  EXPECT_TRUE(cf.event);
  EXPECT_THROW(pui::cf_survival_time(p), pui::OutOfRangeError);
  HazardPath c{linear_h(0.01, 10), {0}, {1.5}, 9, false};
  EXPECT_FALSE(pui::cf_survival_time(c, 10.0).event);
}

TEST(CfSurvivalTime, DirectionFollowsOffsetSign) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 500; ++rep) {
    auto rates = random_rates(rng, 60);
    auto h = to_hazard(rates);
    const double te = 1 + 40 * u(rng);
    HazardPath neg{h, {0, te / 3, te / 2}, {-u(rng), -u(rng), -u(rng)}, te, true};
    HazardPath pos{h, {0, te / 3, te / 2}, {u(rng), u(rng), u(rng)}, te, true};
    EXPECT_LE(pui::cf_survival_time(neg, 60.0).t, te);
    EXPECT_GE(pui::cf_survival_time(pos, 60.0).t, te);
  }
}

TEST(CfSurvivalTime, SplittingAnIntervalIsTelescoping) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 200; ++rep) {
    auto h = to_hazard(random_rates(rng, 50));
    const double te = 5 + 40 * u(rng), o = u(rng) - 0.5;
    HazardPath whole{h, {0, te / 2}, {0.1, o}, te, true};
    HazardPath split{h, {0, te / 2, 0.75 * te}, {0.1, o, o}, te, true};
    EXPECT_NEAR(pui::cf_cumhaz_at_event(whole), pui::cf_cumhaz_at_event(split), 1e-14);
  }
}

TEST(CfSurvivalTime, AgreesWithFineGridOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  const double dt = 1e-3;
  for (int rep = 0; rep < 40; ++rep) {
    auto rates = random_rates(rng, 30);
    auto h = to_hazard(rates);
    const double te = std::round(5 + 20 * u(rng));
    std::vector<double> changes{0}, offs{(u(rng) - 0.5)};
    for (double c = 1; c < te; c += std::uniform_int_distribution<int>(1, 5)(rng)) {
      if (c <= changes.back()) continue;
      changes.push_back(c);
      offs.push_back(u(rng) - 0.5);
    }
    HazardPath p{h, changes, offs, te, true};
    const double expected = grid_oracle(rates, p, dt);
    EXPECT_NEAR(pui::cf_survival_time(p, 30.0).t, expected, 1e-6) << "rep " << rep;
  }
}
