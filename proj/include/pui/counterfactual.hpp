#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pui/error.hpp"
#include "pui/timeline.hpp"

namespace pui {

/// A nondecreasing cumulative hazard through (time, value) knots, either a
/// right-continuous step function (Breslow) or piecewise linear
/// (piecewise-exponential hazards). The knots are shared so per-subject
/// curves H0(t) * exp(lp) cost one scale factor each.
class CumulativeHazard {
 public:
  enum class Shape { step, linear };

  struct Knots {
    std::vector<double> time;
    std::vector<double> value;
  };

  CumulativeHazard() = default;
  CumulativeHazard(std::vector<double> time, std::vector<double> value, Shape shape,
                   double scale = 1.0)
      : knots_(std::make_shared<const Knots>(Knots{std::move(time), std::move(value)})),
        shape_(shape),
        scale_(scale) {
    validate();
  }

  CumulativeHazard scaled(double factor) const {
    CumulativeHazard c = *this;
    c.scale_ *= factor;
    return c;
  }

  Shape shape() const { return shape_; }
  double scale() const { return scale_; }
  double max_time() const { return knots_->time.back(); }

  double at(double t) const {
    const auto& tm = knots_->time;
    const auto& v = knots_->value;
    if (t <= tm.front()) return scale_ * v.front();
    if (t >= tm.back()) return scale_ * v.back();
    const auto k = static_cast<std::size_t>(std::upper_bound(tm.begin(), tm.end(), t) - tm.begin()) - 1;
    if (shape_ == Shape::step) return scale_ * v[k];
    const double frac = (t - tm[k]) / (tm[k + 1] - tm[k]);
    return scale_ * (v[k] + frac * (v[k + 1] - v[k]));
  }

  /// Smallest t >= from with H(t) >= target, or nullopt if H stays below
  /// the target over its whole domain.
  std::optional<double> first_reaching(double target, double from = 0.0) const {
    if (at(from) >= target) return from;
    const auto& tm = knots_->time;
    const auto& v = knots_->value;
    auto k = static_cast<std::size_t>(std::upper_bound(tm.begin(), tm.end(), from) - tm.begin());
    for (; k < tm.size(); ++k) {
      const double hk = scale_ * v[k];
      if (hk < target) continue;
      if (shape_ == Shape::step || k == 0) return tm[k];
      const double h_prev = scale_ * v[k - 1];
      const double t_prev = std::max(tm[k - 1], from);
      const double h_from = t_prev == tm[k - 1] ? h_prev : at(t_prev);
      if (hk == h_from) return t_prev;
      const double t = t_prev + (target - h_from) / (hk - h_from) * (tm[k] - t_prev);
      return std::clamp(t, t_prev, tm[k]);
    }
    return std::nullopt;
  }

 private:
  void validate() const {
    const auto& tm = knots_->time;
    const auto& v = knots_->value;
    if (tm.empty() || tm.size() != v.size())
      throw ValidationError("cumulative hazard needs matching, non-empty knots");
    if (tm.front() != 0.0 || v.front() != 0.0)
      throw ValidationError("cumulative hazard must start at (0, 0)");
    for (std::size_t k = 1; k < tm.size(); ++k) {
      if (!(tm[k] > tm[k - 1])) throw ValidationError("cumulative hazard times must increase");
      if (v[k] < v[k - 1]) throw ValidationError("cumulative hazard must be nondecreasing");
    }
    if (!(scale_ >= 0.0) || !std::isfinite(scale_))
      throw ValidationError("cumulative hazard scale must be finite and nonnegative");
  }

  std::shared_ptr<const Knots> knots_;
  Shape shape_ = Shape::step;
  double scale_ = 1.0;
};

/// A subject's reference-scale cumulative hazard together with the times at
/// which their treatment status changed and the log-hazard offset in force
/// from each change time until the next (or until t_event).
struct HazardPath {
  CumulativeHazard H;
  std::vector<double> change_times;
  std::vector<double> offsets;
  double t_event = 0.0;
  bool event = false;

  void validate() const {
    if (change_times.size() != offsets.size())
      throw ValidationError("hazard path: one offset per change time required");
    for (std::size_t i = 0; i < change_times.size(); ++i) {
      if (change_times[i] < 0.0) throw ValidationError("hazard path: negative change time");
      if (i > 0 && !(change_times[i] > change_times[i - 1]))
        throw ValidationError("hazard path: change times must be strictly increasing");
      if (!std::isfinite(offsets[i])) throw ValidationError("hazard path: non-finite offset");
    }
    if (!change_times.empty() && !(change_times.back() < t_event))
      throw ValidationError("hazard path: last change time must precede t_event");
  }
};

/// Hazard the subject actually accrued up to t_event, re-expressed on the
/// reference scale: H(t_1) + sum_i exp(o_i) (H(t_{i+1}) - H(t_i)).
///
/// Evaluated as H(t_event) + sum_i expm1(o_i) (H(t_{i+1}) - H(t_i)), which
/// is the same quantity and returns H(t_event) exactly when every offset is 0.
inline double cf_cumhaz_at_event(const HazardPath& path) {
  path.validate();
  double total = path.H.at(path.t_event);
  const std::size_t n = path.change_times.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = path.change_times[i];
    const double hi = i + 1 < n ? path.change_times[i + 1] : path.t_event;
    const double m = std::expm1(path.offsets[i]);
    if (m != 0.0) total += m * (path.H.at(hi) - path.H.at(lo));
  }
  return total;
}

struct CfTime {
  double t = 0.0;
  bool event = false;
};

/// Counterfactual time: the earliest time at which the reference hazard
/// reaches the accrued hazard, capped at `cap`. When the target is not below
/// H(t_event) the search starts at t_event, so unchanged hazard maps to the
/// factual time. The event flag is carried over unchanged.
inline CfTime cf_survival_time(const HazardPath& path, std::optional<double> cap = std::nullopt) {
  const double target = cf_cumhaz_at_event(path);
  const double at_event = path.H.at(path.t_event);
  const double from = target >= at_event ? path.t_event : 0.0;
  auto t = path.H.first_reaching(target, from);
  if (!t) {
    if (!cap) throw OutOfRangeError("cumulative hazard never reaches the counterfactual target");
    return {*cap, path.event};
  }
  if (cap && *t > *cap) return {*cap, path.event};
  return {*t, path.event};
}

/// Path from layered status segments: every segment start is a change time
/// and carries that segment's offset (absolute or baseline-relative).
inline HazardPath make_hazard_path(const CumulativeHazard& H, const std::vector<StatusSegment>& segments,
                                   const EffectConstants& c, OffsetMode mode, double t_event,
                                   bool event) {
  HazardPath p;
  p.H = H;
  p.t_event = t_event;
  p.event = event;
  for (const auto& s : segments) {
    if (s.start >= t_event) break;
    p.change_times.push_back(s.start);
    p.offsets.push_back(segment_offset(s, c, mode));
  }
  return p;
}

}  // namespace pui
