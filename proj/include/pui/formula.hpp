#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pui/cohort.hpp"
#include "pui/error.hpp"
#include "pui/spline.hpp"

namespace pui {

struct SplineSpec {
  std::string variable;
  std::vector<double> knots;  // empty until resolved from data
  int n_knots = 4;
};

/// `left * term`, where `term` names a declared linear or spline term.
struct Interaction {
  std::string left;
  std::string term;
};

struct FormulaSpec {
  std::vector<std::string> linear;
  std::vector<SplineSpec> splines;
  std::vector<Interaction> interactions;
  std::vector<std::string> offsets;

  bool empty() const { return linear.empty() && splines.empty() && interactions.empty(); }

  const SplineSpec* spline_for(const std::string& var) const {
    for (const auto& s : splines)
      if (s.variable == var) return &s;
    return nullptr;
  }
  bool knots_resolved() const {
    for (const auto& s : splines)
      if (s.knots.empty()) return false;
    return true;
  }
};

namespace detail {

inline std::string spline_column_name(const std::string& var, std::size_t j) {
  return var + std::string(j, '\'');
}

inline std::vector<double> knot_probs(int n) {
  switch (n) {
    case 3: return {0.10, 0.50, 0.90};
    case 4: return {std::begin(kDefaultKnotProbs), std::end(kDefaultKnotProbs)};
    case 5: return {0.05, 0.275, 0.50, 0.725, 0.95};
    case 6: return {0.05, 0.23, 0.41, 0.59, 0.77, 0.95};
    case 7: return {0.025, 0.1833, 0.3417, 0.50, 0.6583, 0.8167, 0.975};
    default:
      throw InvalidSpecError("unsupported knot count " + std::to_string(n) + " (use 3..7)");
  }
}

}  // namespace detail

/// Expanded column names in their deterministic order: linear terms, spline
/// bases, then interactions (each expanded like its right-hand term).
inline std::vector<std::string> expanded_columns(const FormulaSpec& f) {
  std::vector<std::string> cols;
  std::set<std::string> declared;
  auto basis_names = [&f](const std::string& term) {
    std::vector<std::string> names;
    if (const auto* s = f.spline_for(term)) {
      const std::size_t dim = s->knots.empty() ? static_cast<std::size_t>(s->n_knots - 1)
                                               : s->knots.size() - 1;
      for (std::size_t j = 0; j < dim; ++j) names.push_back(detail::spline_column_name(term, j));
    } else {
      names.push_back(term);
    }
    return names;
  };
  for (const auto& l : f.linear) {
    cols.push_back(l);
    declared.insert(l);
  }
  for (const auto& s : f.splines) {
    if (s.knots.empty() && s.n_knots < 3)
      throw InvalidSpecError("spline on " + s.variable + " needs at least 3 knots");
    for (auto& n : basis_names(s.variable)) cols.push_back(n);
    declared.insert(s.variable);
  }
  for (const auto& ia : f.interactions) {
    if (!declared.count(ia.left) || !declared.count(ia.term))
      throw InvalidSpecError("interaction " + ia.left + "*" + ia.term +
                             " references an undeclared term");
    if (f.spline_for(ia.left))
      throw InvalidSpecError("interaction left-hand side must be a linear term: " + ia.left);
    for (auto& n : basis_names(ia.term)) cols.push_back(ia.left + ":" + n);
  }
  std::set<std::string> seen;
  for (const auto& c : cols)
    if (!seen.insert(c).second) throw InvalidSpecError("duplicate design column: " + c);
  return cols;
}

/// Fills unset spline knots from the first row of each subject (so long
/// counting-process data does not over-weight subjects with many intervals).
inline FormulaSpec resolve_knots(FormulaSpec f, const std::vector<CohortRow>& rows) {
  for (auto& s : f.splines) {
    if (!s.knots.empty()) {
      validate_knots(s.knots);
      continue;
    }
    std::vector<double> sample;
    std::set<std::string> seen;
    for (const auto& r : rows)
      if (seen.insert(r.subject_id).second) sample.push_back(r.at(s.variable));
    std::vector<double> knots;
    for (double p : detail::knot_probs(s.n_knots)) knots.push_back(quantile(sample, p));
    try {
      validate_knots(knots);
    } catch (const InvalidSpecError&) {
      throw InvalidSpecError("cannot place distinct knots for " + s.variable +
                             " (too few distinct values)");
    }
    s.knots = std::move(knots);
  }
  return f;
}

using CovariateLookup = std::function<double(const std::string&)>;

/// One design row for resolved knots.
inline void expand_row(const FormulaSpec& f, const CovariateLookup& get, double* out) {
  std::size_t c = 0;
  std::map<std::string, std::vector<double>> cache;
  auto term_values = [&](const std::string& term) -> const std::vector<double>& {
    auto it = cache.find(term);
    if (it != cache.end()) return it->second;
    std::vector<double> v;
    if (const auto* s = f.spline_for(term))
      v = rcs_basis(get(term), s->knots);
    else
      v = {get(term)};
    return cache.emplace(term, std::move(v)).first->second;
  };
  for (const auto& l : f.linear) out[c++] = term_values(l)[0];
  for (const auto& s : f.splines)
    for (double v : term_values(s.variable)) out[c++] = v;
  for (const auto& ia : f.interactions) {
    const double left = term_values(ia.left)[0];
    for (double v : term_values(ia.term)) out[c++] = left * v;
  }
}

inline Eigen::RowVectorXd design_row(const FormulaSpec& f,
                                     const std::map<std::string, double>& covariates) {
  const auto cols = expanded_columns(f);
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(cols.size()));
  expand_row(
      f,
      [&covariates](const std::string& n) {
        auto it = covariates.find(n);
        if (it == covariates.end()) throw MissingColumnError(n);
        return it->second;
      },
      row.data());
  return row;
}

inline double offset_sum(const FormulaSpec& f, const std::map<std::string, double>& covariates) {
  double s = 0.0;
  for (const auto& o : f.offsets) {
    auto it = covariates.find(o);
    if (it == covariates.end()) throw MissingColumnError(o);
    s += it->second;
  }
  return s;
}

/// Design matrix plus the survival response, ready for the Cox engine.
struct Design {
  std::vector<std::string> columns;
  Eigen::MatrixXd x;
  Eigen::VectorXd offset;
  std::vector<double> tstart;
  std::vector<double> tstop;
  std::vector<char> event;
  std::vector<std::string> subject_id;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }
};

/// Builds the design for `rows`. Knots must already be resolved. Each row's
/// own `offset` is added to the formula's named offset columns.
inline Design build_design(const std::vector<CohortRow>& rows, const FormulaSpec& f) {
  if (!f.knots_resolved()) throw InvalidSpecError("spline knots not resolved");
  Design d;
  d.columns = expanded_columns(f);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(d.columns.size());
  // Row-major scratch so expand_row can write contiguous memory.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(n, p);
  d.offset.resize(n);
  d.tstart.reserve(rows.size());
  d.tstop.reserve(rows.size());
  d.event.reserve(rows.size());
  d.subject_id.reserve(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (p > 0) expand_row(f, [&r](const std::string& name) { return r.at(name); }, x.row(i).data());
    d.offset(i) = r.offset + offset_sum(f, r.covariates);
    d.tstart.push_back(r.tstart);
    d.tstop.push_back(r.tstop);
    d.event.push_back(r.event ? 1 : 0);
    d.subject_id.push_back(r.subject_id);
  }
  d.x = x;
  return d;
}

inline void to_json(nlohmann::json& j, const FormulaSpec& f) {
  j = nlohmann::json::object();
  j["linear"] = f.linear;
  auto splines = nlohmann::json::array();
  for (const auto& s : f.splines)
    splines.push_back({{"variable", s.variable}, {"knots", s.knots}, {"n_knots", s.n_knots}});
  j["splines"] = splines;
  auto inter = nlohmann::json::array();
  for (const auto& ia : f.interactions) inter.push_back({ia.left, ia.term});
  j["interactions"] = inter;
  j["offsets"] = f.offsets;
}

inline void from_json(const nlohmann::json& j, FormulaSpec& f) {
  f = FormulaSpec{};
  f.linear = j.value("linear", std::vector<std::string>{});
  for (const auto& s : j.value("splines", nlohmann::json::array())) {
    SplineSpec spec;
    spec.variable = s.at("variable").get<std::string>();
    spec.knots = s.value("knots", std::vector<double>{});
    spec.n_knots = s.value("n_knots", 4);
    f.splines.push_back(std::move(spec));
  }
  for (const auto& ia : j.value("interactions", nlohmann::json::array()))
    f.interactions.push_back({ia.at(0).get<std::string>(), ia.at(1).get<std::string>()});
  f.offsets = j.value("offsets", std::vector<std::string>{});
}

}  // namespace pui
