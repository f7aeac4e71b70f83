#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pui/error.hpp"

namespace pui {

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition used by R's quantile()).
inline double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw InvalidSpecError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline constexpr double kDefaultKnotProbs[] = {0.05, 0.35, 0.65, 0.95};

/// Knots at the 0.05/0.35/0.65/0.95 sample quantiles.
inline std::vector<double> default_knots(std::span<const double> sample) {
  std::vector<double> v(sample.begin(), sample.end());
  std::vector<double> knots;
  for (double p : kDefaultKnotProbs) knots.push_back(quantile(v, p));
  return knots;
}

inline void validate_knots(std::span<const double> knots) {
  if (knots.size() < 3)
    throw InvalidSpecError("restricted cubic spline needs at least 3 knots, got " +
                           std::to_string(knots.size()));
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1]))
      throw InvalidSpecError("spline knots must be strictly ascending");
}

/// Restricted cubic spline basis in Harrell's parameterization.
///
/// Returns `knots.size() - 1` values: `x` itself followed by one truncated
/// cubic term per interior knot. Each cubic term is constrained to be linear
/// beyond the outer knots and is divided by `(t_k - t_1)^2` so all terms are
/// on the scale of `x`.
inline std::vector<double> rcs_basis(double x, std::span<const double> knots) {
  validate_knots(knots);
  const std::size_t k = knots.size();
  const double t_last = knots[k - 1];
  const double t_penult = knots[k - 2];
  const double norm = (t_last - knots[0]) * (t_last - knots[0]);
  auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };

  std::vector<double> out;
  out.reserve(k - 1);
  out.push_back(x);
  for (std::size_t j = 0; j + 2 < k; ++j) {
    const double tj = knots[j];
    double term = cube_plus(x - tj) -
                  cube_plus(x - t_penult) * (t_last - tj) / (t_last - t_penult) +
                  cube_plus(x - t_last) * (t_penult - tj) / (t_last - t_penult);
    out.push_back(term / norm);
  }
  return out;
}

}  // namespace pui
