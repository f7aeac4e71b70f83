#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pui/cohort.hpp"
#include "pui/csv.hpp"
#include "pui/error.hpp"

namespace pui {

enum class Drug { statin, antihypertensive };

inline std::string to_string(Drug d) { return d == Drug::statin ? "statin" : "antihypertensive"; }

inline Drug parse_drug(const std::string& s) {
  if (s == "statin") return Drug::statin;
  if (s == "antihypertensive" || s == "ah") return Drug::antihypertensive;
  throw ValidationError("unknown drug '" + s + "'");
}

struct TreatmentInterval {
  std::string subject_id;
  Drug drug = Drug::statin;
  double start = 0.0;
  double end = 0.0;  // exclusive
  int status = 0;
};

/// Joint statin / antihypertensive status over [start, end). The relative
/// fields are filled by relative_status().
struct StatusSegment {
  double start = 0.0;
  double end = 0.0;
  int a_stat = 0;
  int a_ah = 0;
  int ar_stat = 0;
  int ar_ah = 0;

  bool operator==(const StatusSegment&) const = default;
};

/// Log-hazard constants for treatment and modifiable-risk-factor offsets.
/// Defaults are the published total effects of statins and
/// antihypertensives and the direct per-unit effects of SBP, BMI and
/// non-HDL cholesterol, with the thresholds below which no further benefit
/// is assumed.
struct EffectConstants {
  double b_stat = -0.3102413;
  double b_ah = -0.3245535;
  double b_sbp = 0.02433163;
  double b_bmi = 0.02173449;
  double b_nonhdl = 0.1936187;
  double sbp_target = 120.0;
  double bmi_target = 25.0;
  double nonhdl_target = 2.6;

  void validate() const {
    for (double v : {b_stat, b_ah, b_sbp, b_bmi, b_nonhdl, sbp_target, bmi_target, nonhdl_target})
      if (!std::isfinite(v)) throw ValidationError("effect constants must be finite");
    if (!(sbp_target > 0 && bmi_target > 0 && nonhdl_target > 0))
      throw ValidationError("risk-factor targets must be positive");
  }
  bool operator==(const EffectConstants&) const = default;
};

enum class OffsetMode { absolute, relative };

inline std::string to_string(OffsetMode m) { return m == OffsetMode::absolute ? "absolute" : "relative"; }

namespace detail {

inline void check_partition(std::vector<TreatmentInterval> iv, double followup_end,
                            const char* label) {
  if (iv.empty()) throw TimelineIntegrityError(std::string(label) + ": no intervals");
  std::sort(iv.begin(), iv.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  double cursor = 0.0;
  for (const auto& i : iv) {
    if (!(i.end > i.start))
      throw TimelineIntegrityError(std::string(label) + ": interval with end <= start");
    if (i.status != 0 && i.status != 1)
      throw TimelineIntegrityError(std::string(label) + ": status must be 0 or 1");
    if (i.start < cursor)
      throw TimelineIntegrityError(std::string(label) + ": overlapping intervals at " +
                                   std::to_string(i.start));
    if (i.start > cursor)
      throw TimelineIntegrityError(std::string(label) + ": gap in intervals at " +
                                   std::to_string(cursor));
    cursor = i.end;
  }
  if (cursor != followup_end)
    throw TimelineIntegrityError(std::string(label) + ": intervals end at " +
                                 std::to_string(cursor) + ", follow-up ends at " +
                                 std::to_string(followup_end));
}

inline int status_at(const std::vector<TreatmentInterval>& iv, double t) {
  for (const auto& i : iv)
    if (i.start <= t && t < i.end) return i.status;
  return 0;
}

}  // namespace detail

/// Coarsest common refinement of the two drug timelines over
/// [0, followup_end). Adjacent output segments always differ in status.
inline std::vector<StatusSegment> layer_intervals(const std::vector<TreatmentInterval>& statin,
                                                  const std::vector<TreatmentInterval>& ah,
                                                  double followup_end) {
  detail::check_partition(statin, followup_end, "statin");
  detail::check_partition(ah, followup_end, "antihypertensive");
  std::set<double> cuts{0.0, followup_end};
  for (const auto& i : statin) cuts.insert(i.start);
  for (const auto& i : ah) cuts.insert(i.start);
  std::vector<double> b(cuts.begin(), cuts.end());
  std::vector<StatusSegment> out;
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    StatusSegment s{b[k], b[k + 1], detail::status_at(statin, b[k]), detail::status_at(ah, b[k])};
    if (!out.empty() && out.back().a_stat == s.a_stat && out.back().a_ah == s.a_ah)
      out.back().end = s.end;
    else
      out.push_back(s);
  }
  return out;
}

/// Fills ar_x = a_x - a_x(baseline).
inline std::vector<StatusSegment> relative_status(std::vector<StatusSegment> segments,
                                                  int a_stat0, int a_ah0) {
  if ((a_stat0 != 0 && a_stat0 != 1) || (a_ah0 != 0 && a_ah0 != 1))
    throw ValidationError("baseline treatment status must be 0 or 1");
  for (auto& s : segments) {
    s.ar_stat = s.a_stat - a_stat0;
    s.ar_ah = s.a_ah - a_ah0;
  }
  return segments;
}

inline double segment_offset(const StatusSegment& s, const EffectConstants& c, OffsetMode mode) {
  if (mode == OffsetMode::absolute) return s.a_stat * c.b_stat + s.a_ah * c.b_ah;
  return s.ar_stat * c.b_stat + s.ar_ah * c.b_ah;
}

/// Which modifiable risk factors carry a fixed (offset) effect.
struct MrfFactors {
  bool sbp = true;
  bool bmi = true;
  bool nonhdl = true;
  bool operator==(const MrfFactors&) const = default;
};

/// Sum over factors of max(0, x - target) * b_x.
inline double mrf_offset(double sbp, double bmi, double nonhdl, const EffectConstants& c,
                         MrfFactors factors = {}) {
  double o = 0.0;
  if (factors.sbp) o += std::max(0.0, sbp - c.sbp_target) * c.b_sbp;
  if (factors.bmi) o += std::max(0.0, bmi - c.bmi_target) * c.b_bmi;
  if (factors.nonhdl) o += std::max(0.0, nonhdl - c.nonhdl_target) * c.b_nonhdl;
  return o;
}

/// One counting-process row per segment up to `event_time`. The row offset
/// is the segment's treatment offset plus `constant_offset`; the row
/// covariates are the subject covariates plus the current statuses.
inline std::vector<CohortRow> rows_from_segments(const std::string& subject_id,
                                                 const std::map<std::string, double>& covariates,
                                                 const std::vector<StatusSegment>& segments,
                                                 double event_time, bool event,
                                                 const EffectConstants& c, OffsetMode mode,
                                                 double constant_offset = 0.0) {
  if (segments.empty()) throw TimelineIntegrityError("subject " + subject_id + ": no segments");
  if (!(event_time > segments.front().start) || event_time > segments.back().end)
    throw TimelineIntegrityError("subject " + subject_id + ": event time " +
                                 std::to_string(event_time) + " outside follow-up");
  std::vector<CohortRow> rows;
  for (const auto& s : segments) {
    if (s.start >= event_time) break;
    CohortRow r;
    r.subject_id = subject_id;
    r.tstart = s.start;
    r.tstop = std::min(s.end, event_time);
    r.covariates = covariates;
    r.covariates["statin_status"] = s.a_stat;
    r.covariates["ah_status"] = s.a_ah;
    r.offset = segment_offset(s, c, mode) + constant_offset;
    rows.push_back(std::move(r));
  }
  rows.back().event = event;
  return rows;
}

/// Timelines keyed by subject, in file order.
struct SubjectTimeline {
  std::vector<TreatmentInterval> statin;
  std::vector<TreatmentInterval> ah;

  double end() const {
    double e = 0.0;
    for (const auto& i : statin) e = std::max(e, i.end);
    for (const auto& i : ah) e = std::max(e, i.end);
    return e;
  }
};

inline std::map<std::string, SubjectTimeline> timelines_from_table(const csv::Table& t) {
  const auto c_id = t.column("subject_id"), c_drug = t.column("drug"), c_start = t.column("start"),
             c_end = t.column("end"), c_status = t.column("status");
  std::map<std::string, SubjectTimeline> out;
  for (const auto& cells : t.rows) {
    TreatmentInterval iv;
    iv.subject_id = cells[c_id];
    iv.drug = parse_drug(cells[c_drug]);
    iv.start = csv::parse_double(cells[c_start], "start");
    iv.end = csv::parse_double(cells[c_end], "end");
    const double st = csv::parse_double(cells[c_status], "status");
    if (st != 0.0 && st != 1.0) throw TimelineIntegrityError("status must be 0 or 1");
    iv.status = static_cast<int>(st);
    auto& tl = out[iv.subject_id];
    (iv.drug == Drug::statin ? tl.statin : tl.ah).push_back(iv);
  }
  return out;
}

inline std::map<std::string, SubjectTimeline> read_timelines_csv(const std::string& path) {
  return timelines_from_table(csv::read_file(path));
}

inline csv::Table timelines_to_table(const std::vector<TreatmentInterval>& intervals) {
  csv::Table t;
  t.header = {"subject_id", "drug", "start", "end", "status"};
  for (const auto& i : intervals)
    t.rows.push_back({i.subject_id, to_string(i.drug), csv::format_double(i.start),
                      csv::format_double(i.end), std::to_string(i.status)});
  return t;
}

/// Layered segments for a subject, with baseline-relative fields filled from
/// the status at time zero.
inline std::vector<StatusSegment> subject_segments(const SubjectTimeline& tl) {
  auto seg = layer_intervals(tl.statin, tl.ah, tl.end());
  return relative_status(seg, seg.front().a_stat, seg.front().a_ah);
}

}  // namespace pui
