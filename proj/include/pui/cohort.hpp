#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pui/csv.hpp"
#include "pui/error.hpp"

namespace pui {

/// One counting-process interval (tstart, tstop] of one subject.
struct CohortRow {
  std::string subject_id;
  double tstart = 0.0;
  double tstop = 0.0;
  bool event = false;
  std::map<std::string, double> covariates;
  double offset = 0.0;  // log-hazard units, fixed coefficient 1

  double at(const std::string& name) const {
    auto it = covariates.find(name);
    if (it == covariates.end()) throw MissingColumnError(name);
    return it->second;
  }
};

/// Checks tstop > tstart, per-subject ordering without overlap, and that
/// only the last row of a subject can carry the event.
inline void validate_rows(const std::vector<CohortRow>& rows) {
  std::map<std::string, std::vector<const CohortRow*>> by_subject;
  for (const auto& r : rows) {
    if (!(r.tstop > r.tstart))
      throw ValidationError("subject " + r.subject_id + ": tstop must exceed tstart");
    if (r.tstart < 0.0) throw ValidationError("subject " + r.subject_id + ": negative tstart");
    by_subject[r.subject_id].push_back(&r);
  }
  for (auto& [id, list] : by_subject) {
    std::sort(list.begin(), list.end(),
              [](const CohortRow* a, const CohortRow* b) { return a->tstart < b->tstart; });
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i]->tstart < list[i - 1]->tstop)
        throw ValidationError("subject " + id + ": overlapping intervals");
      if (list[i]->event && i + 1 != list.size())
        throw ValidationError("subject " + id + ": event flagged before the last interval");
    }
  }
}

inline const std::set<std::string>& reserved_cohort_columns() {
  static const std::set<std::string> cols = {"subject_id", "tstart", "tstop", "event"};
  return cols;
}

/// Reads the long counting-process CSV. Every non-reserved column becomes a
/// named covariate; offset columns are selected later by the formula.
inline std::vector<CohortRow> rows_from_table(const csv::Table& t) {
  const auto c_id = t.column("subject_id");
  const auto c_start = t.column("tstart");
  const auto c_stop = t.column("tstop");
  const auto c_event = t.column("event");
  std::vector<CohortRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& cells : t.rows) {
    CohortRow r;
    r.subject_id = cells[c_id];
    r.tstart = csv::parse_double(cells[c_start], "tstart");
    r.tstop = csv::parse_double(cells[c_stop], "tstop");
    const double ev = csv::parse_double(cells[c_event], "event");
    if (ev != 0.0 && ev != 1.0) throw ValidationError("event must be 0 or 1");
    r.event = ev == 1.0;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (reserved_cohort_columns().count(t.header[i])) continue;
      r.covariates[t.header[i]] = csv::parse_double(cells[i], t.header[i]);
    }
    rows.push_back(std::move(r));
  }
  validate_rows(rows);
  return rows;
}

inline std::vector<CohortRow> read_cohort_csv(const std::string& path) {
  return rows_from_table(csv::read_file(path));
}

inline csv::Table rows_to_table(const std::vector<CohortRow>& rows) {
  csv::Table t;
  t.header = {"subject_id", "tstart", "tstop", "event"};
  std::vector<std::string> names;
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().covariates) names.push_back(k);
  t.header.insert(t.header.end(), names.begin(), names.end());
  for (const auto& r : rows) {
    std::vector<std::string> cells = {r.subject_id, csv::format_double(r.tstart),
                                      csv::format_double(r.tstop), r.event ? "1" : "0"};
    for (const auto& n : names) cells.push_back(csv::format_double(r.at(n)));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void write_cohort_csv(const std::string& path, const std::vector<CohortRow>& rows) {
  csv::write_file(path, rows_to_table(rows));
}

}  // namespace pui
