#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pui/anchor_store.hpp"
#include "pui/evaluation.hpp"
#include "pui/models.hpp"
#include "pui/service.hpp"
#include "pui/synth.hpp"

namespace pui {

namespace cli_detail {

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline AnchorStore open_store(const std::string& path) {
  if (!path.empty()) return AnchorStore(path);
  return AnchorStore::from_env();
}

}  // namespace cli_detail

/// Entry point of the `pui` tool. Returns 0 on success, 1 for usage and
/// validation errors, 2 for runtime failures.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Predictions under interventions: simulate, fit, predict and evaluate survival models", "pui"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pui 0.1.0");

  // simulate
  std::string sim_config, sim_cohort, sim_timelines, sim_truth, sim_risk_sbp;
  std::size_t sim_n = 0;
  std::uint64_t sim_seed = 0;
  auto* sim = app.add_subcommand("simulate", "Simulate a cohort with known counterfactual times");
  sim->add_option("--config", sim_config, "SimConfig JSON");
  sim->add_option("--n", sim_n, "Number of subjects");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--risk-sbp", sim_risk_sbp, "SBP acting on risk: unexposed or measured")
      ->check(CLI::IsMember({"unexposed", "measured"}));
  sim->add_option("--cohort", sim_cohort, "Output cohort CSV")->required();
  sim->add_option("--timelines", sim_timelines, "Output treatment timelines CSV")->required();
  sim->add_option("--truth", sim_truth, "Output true counterfactual times CSV");

  // fit
  std::string fit_variant_name, fit_cohort, fit_timelines, fit_out, fit_constants, fit_dag, fit_comb = "odds";
  bool fit_clip = false;
  int fit_max_iter = 50;
  auto* fit = app.add_subcommand("fit", "Fit a model variant and write its artifact");
  fit->add_option("--variant", fit_variant_name, "Model variant")->required();
  fit->add_option("--cohort", fit_cohort, "Cohort CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--timelines", fit_timelines, "Treatment timelines CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "Output artifact JSON")->required();
  fit->add_option("--constants", fit_constants, "Effect constants JSON");
  fit->add_option("--dag", fit_dag, "Causal DAG JSON");
  fit->add_option("--combination", fit_comb, "Two-component combination scale: odds or cumhaz")
      ->check(CLI::IsMember({"odds", "cumhaz"}));
  fit->add_flag("--clip-intervention", fit_clip, "Clip two-component mediator changes at their targets");
  fit->add_option("--max-iter", fit_max_iter, "Newton iteration limit");

  // predict
  std::string pr_model, pr_visit, pr_scenario, pr_anchor, pr_store;
  double pr_horizon = kDefaultHorizon;
  auto* pred = app.add_subcommand("predict", "Risk for one visit, optionally under a scenario");
  pred->add_option("--model", pr_model, "Model artifact JSON")->required()->check(CLI::ExistingFile);
  pred->add_option("--visit", pr_visit, "Visit JSON")->required()->check(CLI::ExistingFile);
  pred->add_option("--scenario", pr_scenario, "Scenario JSON");
  pred->add_option("--anchor", pr_anchor, "Anchor JSON (two-component models)");
  pred->add_option("--anchor-store", pr_store, "Anchor store file (default $PUI_ANCHOR_STORE)");
  pred->add_option("--horizon", pr_horizon, "Prediction horizon in days");

  // cf-times and evaluate share their inputs
  std::string ev_model, ev_cohort, ev_timelines, ev_strategy = "factual", ev_out, ev_curve;
  double ev_horizon = kDefaultHorizon;
  std::size_t ev_boot = 0;
  std::uint64_t ev_seed = 1;
  auto add_eval_inputs = [&](CLI::App* c) {
    c->add_option("--model", ev_model, "Model artifact JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--cohort", ev_cohort, "Cohort CSV")->required()->check(CLI::ExistingFile);
    c->add_option("--timelines", ev_timelines, "Treatment timelines CSV")->required()->check(CLI::ExistingFile);
    c->add_option("--strategy", ev_strategy, "factual, never_treated or current_strategy")
        ->check(CLI::IsMember({"factual", "never_treated", "current_strategy"}));
    c->add_option("--horizon", ev_horizon, "Prediction horizon in days");
  };
  auto* cf = app.add_subcommand("cf-times", "Counterfactual event times under a treatment strategy");
  add_eval_inputs(cf);
  cf->add_option("--out", ev_out, "Output CSV")->required();
  auto* ev = app.add_subcommand("evaluate", "Discrimination and calibration under a treatment strategy");
  add_eval_inputs(ev);
  ev->add_option("--bootstrap", ev_boot, "Bootstrap resamples for intervals");
  ev->add_option("--seed", ev_seed, "Bootstrap seed");
  ev->add_option("--curve", ev_curve, "Write the calibration curve CSV here");

  // anchor
  std::string an_store, an_patient, an_visit;
  bool an_claim = false;
  auto* anc = app.add_subcommand("anchor", "Inspect or change first-visit anchors");
  anc->require_subcommand(1);
  anc->add_option("--store", an_store, "Anchor store file (default $PUI_ANCHOR_STORE)");
  auto* an_show = anc->add_subcommand("show", "Print a patient's anchor and visit count");
  an_show->add_option("--patient", an_patient, "Patient id")->required();
  auto* an_record = anc->add_subcommand("record", "Record a visit; the first one becomes the anchor");
  an_record->add_option("--visit", an_visit, "Visit JSON")->required()->check(CLI::ExistingFile);
  an_record->add_flag("--claim-anchor", an_claim, "Fail if the visit is not the patient's anchor");
  auto* an_re = anc->add_subcommand("reanchor", "Replace a patient's anchor with the given visit");
  an_re->add_option("--visit", an_visit, "Visit JSON")->required()->check(CLI::ExistingFile);

  // serve
  std::vector<std::string> sv_models;
  std::string sv_host = "127.0.0.1", sv_store;
  int sv_port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP what-if API");
  serve->add_option("--model", sv_models, "Artifact as path or name=path; repeatable")->required();
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port");
  serve->add_option("--anchor-store", sv_store, "Anchor store file (default $PUI_ANCHOR_STORE)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    err << target->help();
    return 1;
  }

  try {
    if (*sim) {
      SimConfig c;
      if (!sim_config.empty()) c = cli_detail::read_json(sim_config).get<SimConfig>();
      if (sim->count("--n")) c.n = sim_n;
      if (sim->count("--seed")) c.seed = sim_seed;
      if (!sim_risk_sbp.empty())
        c.risk_sbp = sim_risk_sbp == "measured" ? RiskSbpSource::measured : RiskSbpSource::unexposed;
      c.validate();
      const auto cohort = simulate_cohort(c);
      csv::write_file(sim_cohort, subjects_to_table(cohort_subjects(cohort)));
      csv::write_file(sim_timelines, timelines_table(cohort));
      if (!sim_truth.empty()) csv::write_file(sim_truth, truth_table(cohort));
      std::size_t events = 0;
      for (const auto& s : cohort) events += s.subject.event;
      out << nlohmann::json{{"n", c.n}, {"events", events}, {"config", c}}.dump() << '\n';
    } else if (*fit) {
      const Variant v = parse_variant(fit_variant_name);
      EffectConstants k;
      if (!fit_constants.empty()) k = cli_detail::read_json(fit_constants).get<EffectConstants>();
      std::optional<CausalDag> dag;
      if (!fit_dag.empty()) dag = cli_detail::read_json(fit_dag).get<CausalDag>();
      CoxOptions opt;
      opt.max_iter = fit_max_iter;
      auto a = fit_variant(v, read_subjects_csv(fit_cohort), read_timelines_csv(fit_timelines), k, dag, opt);
      a.combination = parse_combination(fit_comb);
      a.clip_intervention = fit_clip;
      a.created = cli_detail::utc_now();
      write_artifact(fit_out, a);
      out << nlohmann::json{{"variant", to_string(v)},
                            {"iterations", a.fit.iterations},
                            {"loglik", a.fit.loglik},
                            {"n_rows", a.fit.n_rows},
                            {"n_events", a.fit.n_events},
                            {"out", fit_out}}
                 .dump()
          << '\n';
    } else if (*pred) {
      const auto a = read_artifact(pr_model);
      const auto visit = cli_detail::read_json(pr_visit).get<VisitRecord>();
      InterventionScenario s;
      if (!pr_scenario.empty()) s = cli_detail::read_json(pr_scenario).get<InterventionScenario>();
      RiskEstimate r;
      if (!pr_anchor.empty()) {
        const auto anchor = cli_detail::read_json(pr_anchor).get<Anchor>();
        r = predict(a, visit, s, &anchor, pr_horizon);
      } else {
        r = predict_with_store(a, visit, s, cli_detail::open_store(pr_store), pr_horizon);
      }
      out << nlohmann::json(r).dump() << '\n';
    } else if (*cf || *ev) {
      const auto a = read_artifact(ev_model);
      const auto subjects = read_subjects_csv(ev_cohort);
      const auto timelines = read_timelines_csv(ev_timelines);
      const Strategy st = parse_strategy(ev_strategy);
      if (*cf) {
        const auto fact = strategy_pairs(a, subjects, timelines, Strategy::factual, ev_horizon);
        const auto cfp = strategy_pairs(a, subjects, timelines, st, ev_horizon);
        csv::Table t;
        t.header = {"subject_id", "predicted_risk", "time", "event", "cf_time", "cf_event"};
        for (std::size_t i = 0; i < subjects.size(); ++i)
          t.rows.push_back({subjects[i].id, csv::format_double(fact[i].predicted_risk),
                            csv::format_double(fact[i].time), fact[i].event ? "1" : "0",
                            csv::format_double(cfp[i].time), cfp[i].event ? "1" : "0"});
        csv::write_file(ev_out, t);
        out << nlohmann::json{{"n", subjects.size()}, {"strategy", to_string(st)}, {"out", ev_out}}.dump() << '\n';
      } else {
        const auto r = evaluate_under_strategy(a, subjects, timelines, st, ev_horizon, ev_boot, ev_seed);
        if (!ev_curve.empty()) csv::write_file(ev_curve, calibration_curve_table(r.calibration));
        out << nlohmann::json(r).dump() << '\n';
      }
    } else if (*anc) {
      auto store = cli_detail::open_store(an_store);
      if (store.path().empty()) throw ValidationError("anchor commands need --store or $" + std::string(kAnchorStoreEnv));
      if (*an_show) {
        const auto p = store.patient(an_patient);
        if (!p) throw ValidationError("no record for patient " + an_patient);
        out << nlohmann::json{{"patient_id", an_patient},
                              {"anchor", p->anchor},
                              {"visits", p->visits.size()},
                              {"reanchors", p->reanchors}}
                   .dump()
            << '\n';
      } else if (*an_record) {
        out << nlohmann::json(store.record_visit(cli_detail::read_json(an_visit).get<VisitRecord>(), an_claim)).dump()
            << '\n';
      } else {
        out << nlohmann::json(store.reanchor(cli_detail::read_json(an_visit).get<VisitRecord>())).dump() << '\n';
      }
    } else if (*serve) {
      std::map<std::string, ModelArtifact> models;
      for (const auto& spec : sv_models) {
        const auto eq = spec.find('=');
        const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
        const std::string name = eq == std::string::npos ? model_name_from_path(spec) : spec.substr(0, eq);
        if (!models.emplace(name, read_artifact(path)).second) throw ValidationError("duplicate model name " + name);
      }
      auto store = cli_detail::open_store(sv_store);
      Service service(std::move(models), store);
      httplib::Server server;
      err << "listening on " << sv_host << ':' << sv_port << '\n';
      service.listen(server, sv_host, sv_port);
    }
  } catch (const AnchorConflictError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace pui
