#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pui/cohort.hpp"
#include "pui/error.hpp"
#include "pui/formula.hpp"

namespace pui {

/// Right-continuous step function through (time, value) knots; value before
/// the first knot is the first value.
struct StepFunction {
  std::vector<double> time;
  std::vector<double> value;

  double at(double t) const {
    auto it = std::upper_bound(time.begin(), time.end(), t);
    if (it == time.begin()) return value.empty() ? 0.0 : value.front();
    return value[static_cast<std::size_t>(it - time.begin()) - 1];
  }
  double max_time() const { return time.empty() ? 0.0 : time.back(); }
};

/// Counting-process Cox partial likelihood with Breslow ties over a fixed
/// design. Risk set at event time t is {i : tstart_i < t <= tstop_i}.
class PartialLikelihood {
 public:
  struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;  // negative Hessian
  };

  explicit PartialLikelihood(const Design& d) : d_(d) {
    const auto n = static_cast<std::size_t>(d.n());
    by_stop_.resize(n);
    std::iota(by_stop_.begin(), by_stop_.end(), 0);
    by_start_ = by_stop_;
    std::sort(by_stop_.begin(), by_stop_.end(),
              [&d](std::size_t a, std::size_t b) { return d.tstop[a] > d.tstop[b]; });
    std::sort(by_start_.begin(), by_start_.end(),
              [&d](std::size_t a, std::size_t b) { return d.tstart[a] > d.tstart[b]; });
    std::vector<std::size_t> ev;
    for (std::size_t i = 0; i < n; ++i)
      if (d.event[i]) ev.push_back(i);
    std::sort(ev.begin(), ev.end(),
              [&d](std::size_t a, std::size_t b) { return d.tstop[a] > d.tstop[b]; });
    for (std::size_t k = 0; k < ev.size();) {
      EventGroup g;
      g.time = d.tstop[ev[k]];
      while (k < ev.size() && d.tstop[ev[k]] == g.time) g.rows.push_back(ev[k++]);
      groups_.push_back(std::move(g));
    }
  }

  std::size_t n_events() const {
    std::size_t s = 0;
    for (const auto& g : groups_) s += g.rows.size();
    return s;
  }

  double loglik(const Eigen::VectorXd& beta) const { return evaluate(beta, false, false).loglik; }

  Evaluation evaluate(const Eigen::VectorXd& beta, bool need_gradient = true,
                      bool need_information = true) const {
    const Eigen::Index p = d_.p();
    need_gradient = need_gradient || need_information;
    Eigen::VectorXd eta = d_.offset;
    if (p > 0) eta.noalias() += d_.x * beta;
    const double shift = eta.size() ? eta.maxCoeff() : 0.0;
    Eigen::VectorXd w = (eta.array() - shift).exp().matrix();

    Evaluation out;
    if (need_gradient) out.gradient = Eigen::VectorXd::Zero(p);
    if (need_information) out.information = Eigen::MatrixXd::Zero(p, p);

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);  // lower triangle only
    std::size_t ip = 0, jp = 0;
    const std::size_t n = by_stop_.size();

    for (const auto& g : groups_) {
      while (ip < n && d_.tstop[by_stop_[ip]] >= g.time) {
        const auto i = static_cast<Eigen::Index>(by_stop_[ip++]);
        s0 += w(i);
        if (need_gradient) s1.noalias() += w(i) * d_.x.row(i).transpose();
        if (need_information)
          s2.selfadjointView<Eigen::Lower>().rankUpdate(d_.x.row(i).transpose(), w(i));
      }
      while (jp < n && d_.tstart[by_start_[jp]] >= g.time) {
        const auto i = static_cast<Eigen::Index>(by_start_[jp++]);
        s0 -= w(i);
        if (need_gradient) s1.noalias() -= w(i) * d_.x.row(i).transpose();
        if (need_information)
          s2.selfadjointView<Eigen::Lower>().rankUpdate(d_.x.row(i).transpose(), -w(i));
      }
      const auto dcount = static_cast<double>(g.rows.size());
      for (auto r : g.rows) {
        out.loglik += eta(static_cast<Eigen::Index>(r));
        if (need_gradient) out.gradient.noalias() += d_.x.row(static_cast<Eigen::Index>(r)).transpose();
      }
      out.loglik -= dcount * (std::log(s0) + shift);
      if (need_gradient) {
        const Eigen::VectorXd mean = s1 / s0;
        out.gradient.noalias() -= dcount * mean;
        if (need_information) {
          Eigen::MatrixXd m2 = s2.selfadjointView<Eigen::Lower>();
          out.information.noalias() += dcount * (m2 / s0 - mean * mean.transpose());
        }
      }
    }
    return out;
  }

  /// Breslow increments d_j / sum_{risk set} exp(eta); returns (time, H0)
  /// knots starting at (0, 0) and ending at the last observed stop time.
  std::vector<std::pair<double, double>> breslow(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd eta = d_.offset;
    if (d_.p() > 0) eta.noalias() += d_.x * beta;
    std::vector<std::pair<double, double>> incr;  // descending time
    double s0 = 0.0;
    std::size_t ip = 0, jp = 0;
    const std::size_t n = by_stop_.size();
    for (const auto& g : groups_) {
      while (ip < n && d_.tstop[by_stop_[ip]] >= g.time) s0 += std::exp(eta(static_cast<Eigen::Index>(by_stop_[ip++])));
      while (jp < n && d_.tstart[by_start_[jp]] >= g.time) s0 -= std::exp(eta(static_cast<Eigen::Index>(by_start_[jp++])));
      incr.emplace_back(g.time, static_cast<double>(g.rows.size()) / s0);
    }
    std::vector<std::pair<double, double>> out{{0.0, 0.0}};
    double h = 0.0;
    for (auto it = incr.rbegin(); it != incr.rend(); ++it) {
      h += it->second;
      out.emplace_back(it->first, h);
    }
    const double tmax = n ? d_.tstop[by_stop_.front()] : 0.0;
    if (tmax > out.back().first) out.emplace_back(tmax, h);
    return out;
  }

 private:
  struct EventGroup {
    double time = 0.0;
    std::vector<std::size_t> rows;
  };
  const Design& d_;
  std::vector<std::size_t> by_stop_;
  std::vector<std::size_t> by_start_;
  std::vector<EventGroup> groups_;  // descending time
};

struct CoxOptions {
  double tolerance = 1e-8;  // max-norm of the score on standardized columns
  int max_iter = 50;
};

/// Fitted proportional-hazards model. Immutable after construction.
struct CoxFit {
  FormulaSpec formula;  // knots resolved
  std::vector<std::string> columns;
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  std::vector<std::pair<double, double>> baseline_cumhaz;
  double loglik = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  double tolerance = 0.0;
  std::size_t n_rows = 0;
  std::size_t n_events = 0;

  std::map<std::string, double> coefficients() const {
    std::map<std::string, double> out;
    for (std::size_t j = 0; j < columns.size(); ++j) out[columns[j]] = beta(static_cast<Eigen::Index>(j));
    return out;
  }
  double coefficient(const std::string& col) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == col) return beta(static_cast<Eigen::Index>(j));
    throw MissingColumnError(col);
  }
  double std_error(const std::string& col) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == col) {
        const auto k = static_cast<Eigen::Index>(j);
        return std::sqrt(vcov(k, k));
      }
    throw MissingColumnError(col);
  }

  /// x'beta for a covariate map; offsets are not included.
  double linear_predictor(const std::map<std::string, double>& covariates) const {
    if (columns.empty()) return 0.0;
    return design_row(formula, covariates).dot(beta);
  }

  double max_time() const { return baseline_cumhaz.empty() ? 0.0 : baseline_cumhaz.back().first; }

  /// Breslow H0 at t (step function). Throws past the last observed time.
  double cumhaz(double t) const {
    if (t < 0.0) throw OutOfRangeError("negative time");
    if (t > max_time())
      throw OutOfRangeError("time " + std::to_string(t) + " beyond follow-up " +
                            std::to_string(max_time()));
    auto it = std::upper_bound(baseline_cumhaz.begin(), baseline_cumhaz.end(), t,
                               [](double v, const auto& kv) { return v < kv.first; });
    return std::prev(it)->second;
  }

  StepFunction cumhaz_function() const {
    StepFunction s;
    for (const auto& [t, h] : baseline_cumhaz) {
      s.time.push_back(t);
      s.value.push_back(h);
    }
    return s;
  }
};

namespace detail {

inline std::vector<std::string> dependent_columns(const Eigen::MatrixXd& xs,
                                                  const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  std::vector<std::string> bad;
  const auto rank = qr.rank();
  for (Eigen::Index k = rank; k < xs.cols(); ++k)
    bad.push_back(names[static_cast<std::size_t>(qr.colsPermutation().indices()(k))]);
  return bad;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

}  // namespace detail

/// Newton-Raphson maximization of the partial likelihood with step-halving.
/// Columns are centered and scaled internally; coefficients, covariance and
/// the Breslow baseline are reported on the original column scale.
inline CoxFit fit_cox(const Design& design, const FormulaSpec& resolved_formula,
                      const CoxOptions& opt = {}) {
  const Eigen::Index n = design.n();
  const Eigen::Index p = design.p();
  std::size_t events = 0;
  for (char e : design.event) events += e ? 1 : 0;
  if (events == 0) throw ValidationError("cannot fit a Cox model without events");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p), scale = Eigen::VectorXd::Ones(p);
  Design std_design = design;
  std::vector<std::string> constant;
  for (Eigen::Index j = 0; j < p; ++j) {
    mean(j) = design.x.col(j).mean();
    const double sd = std::sqrt((design.x.col(j).array() - mean(j)).square().sum() /
                                std::max<double>(1.0, static_cast<double>(n - 1)));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean(j)))))
      constant.push_back(design.columns[static_cast<std::size_t>(j)]);
    scale(j) = sd > 0 ? sd : 1.0;
    std_design.x.col(j) = (design.x.col(j).array() - mean(j)) / scale(j);
  }
  if (!constant.empty())
    throw RankDeficiencyError("rank-deficient design: zero-variance column(s) " +
                                  detail::join(constant),
                              constant);
  if (p > 0) {
    auto dependent = detail::dependent_columns(std_design.x, design.columns);
    if (!dependent.empty())
      throw RankDeficiencyError("rank-deficient design: linearly dependent column(s) " +
                                    detail::join(dependent),
                                dependent);
  }

  PartialLikelihood pl(std_design);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto ev = pl.evaluate(beta);
  std::vector<IterationTrace> trace;
  int iter = 0;
  auto gnorm = [](const Eigen::VectorXd& g) { return g.size() ? g.cwiseAbs().maxCoeff() : 0.0; };
  trace.push_back({0, ev.loglik, gnorm(ev.gradient), 0});

  while (gnorm(ev.gradient) >= opt.tolerance) {
    if (iter >= opt.max_iter)
      throw DivergenceError("Newton-Raphson did not converge in " + std::to_string(opt.max_iter) +
                                " iterations (score max-norm " +
                                std::to_string(gnorm(ev.gradient)) + ")",
                            trace);
    ++iter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      auto dependent = detail::dependent_columns(ev.information, design.columns);
      throw RankDeficiencyError("singular information matrix; offending column(s) " +
                                    detail::join(dependent),
                                dependent);
    }
    const Eigen::VectorXd step = ldlt.solve(ev.gradient);
    double factor = 1.0;
    int halvings = 0;
    Eigen::VectorXd candidate = beta + step;
    double ll = pl.loglik(candidate);
    const double slack = 1e-12 * std::max(1.0, std::abs(ev.loglik));
    while (!(std::isfinite(ll) && ll >= ev.loglik - slack) && halvings < 40) {
      factor *= 0.5;
      ++halvings;
      candidate = beta + factor * step;
      ll = pl.loglik(candidate);
    }
    if (halvings == 40)
      throw DivergenceError("step-halving failed to increase the partial likelihood", trace);
    beta = candidate;
    ev = pl.evaluate(beta);
    trace.push_back({iter, ev.loglik, gnorm(ev.gradient), halvings});
  }

  CoxFit fit;
  fit.formula = resolved_formula;
  fit.columns = design.columns;
  fit.beta = beta.cwiseQuotient(scale);
  fit.loglik = ev.loglik;
  fit.iterations = iter;
  fit.gradient_norm = gnorm(ev.gradient);
  fit.tolerance = opt.tolerance;
  fit.n_rows = static_cast<std::size_t>(n);
  fit.n_events = events;
  if (p > 0) {
    const Eigen::MatrixXd vstd = ev.information.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::VectorXd inv = scale.cwiseInverse();
    fit.vcov = inv.asDiagonal() * vstd * inv.asDiagonal();
    fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose()).eval();
  } else {
    fit.vcov = Eigen::MatrixXd(0, 0);
  }
  PartialLikelihood original(design);
  fit.baseline_cumhaz = original.breslow(fit.beta);
  return fit;
}

/// Resolves knots from `rows`, builds the design and fits.
inline CoxFit fit_cox(const std::vector<CohortRow>& rows, const FormulaSpec& formula,
                      const CoxOptions& opt = {}) {
  validate_rows(rows);
  const FormulaSpec resolved = resolve_knots(formula, rows);
  const Design d = build_design(rows, resolved);
  return fit_cox(d, resolved, opt);
}

/// Breslow baseline for an existing fit evaluated on `rows` (which need not
/// contain events; with none, H0 is identically zero).
inline std::vector<std::pair<double, double>> breslow_cumhaz(const CoxFit& fit,
                                                             const std::vector<CohortRow>& rows) {
  const Design d = build_design(rows, fit.formula);
  return PartialLikelihood(d).breslow(fit.beta);
}

/// 1 - exp(-H0(w) exp(x'beta + offset)).
inline double predict_survival(const CoxFit& fit, const std::map<std::string, double>& covariates,
                               double offset, double horizon) {
  const double h0 = fit.cumhaz(horizon);
  if (h0 == 0.0) return 0.0;
  const double lp = fit.linear_predictor(covariates) + offset;
  return -std::expm1(-h0 * std::exp(lp));
}

inline void to_json(nlohmann::json& j, const CoxFit& f) {
  j = nlohmann::json::object();
  j["formula"] = f.formula;
  j["columns"] = f.columns;
  nlohmann::json coef = nlohmann::json::object();
  for (std::size_t k = 0; k < f.columns.size(); ++k) coef[f.columns[k]] = f.beta(static_cast<Eigen::Index>(k));
  j["coefficients"] = coef;
  nlohmann::json knots = nlohmann::json::object();
  for (const auto& s : f.formula.splines) knots[s.variable] = s.knots;
  j["knots"] = knots;
  nlohmann::json vc = nlohmann::json::array();
  for (Eigen::Index r = 0; r < f.vcov.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(f.vcov.cols()));
    for (Eigen::Index c = 0; c < f.vcov.cols(); ++c) row[static_cast<std::size_t>(c)] = f.vcov(r, c);
    vc.push_back(row);
  }
  j["vcov"] = vc;
  nlohmann::json bh = nlohmann::json::array();
  for (const auto& [t, h] : f.baseline_cumhaz) bh.push_back({t, h});
  j["baseline_cumhaz"] = bh;
  j["meta"] = {{"tolerance", f.tolerance},     {"iterations", f.iterations},
               {"gradient_norm", f.gradient_norm}, {"loglik", f.loglik},
               {"n_rows", f.n_rows},          {"n_events", f.n_events}};
}

inline void from_json(const nlohmann::json& j, CoxFit& f) {
  f = CoxFit{};
  f.formula = j.at("formula").get<FormulaSpec>();
  f.columns = j.at("columns").get<std::vector<std::string>>();
  const auto p = static_cast<Eigen::Index>(f.columns.size());
  f.beta.resize(p);
  for (Eigen::Index k = 0; k < p; ++k)
    f.beta(k) = j.at("coefficients").at(f.columns[static_cast<std::size_t>(k)]).get<double>();
  f.vcov = Eigen::MatrixXd::Zero(p, p);
  if (j.contains("vcov"))
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c)
        f.vcov(r, c) = j["vcov"].at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  for (const auto& kv : j.at("baseline_cumhaz"))
    f.baseline_cumhaz.emplace_back(kv.at(0).get<double>(), kv.at(1).get<double>());
  const auto& meta = j.value("meta", nlohmann::json::object());
  f.tolerance = meta.value("tolerance", 0.0);
  f.iterations = meta.value("iterations", 0);
  f.gradient_norm = meta.value("gradient_norm", 0.0);
  f.loglik = meta.value("loglik", 0.0);
  f.n_rows = meta.value("n_rows", std::size_t{0});
  f.n_events = meta.value("n_events", std::size_t{0});
  if (expanded_columns(f.formula) != f.columns)
    throw ValidationError("model artifact columns do not match its formula");
}

}  // namespace pui
