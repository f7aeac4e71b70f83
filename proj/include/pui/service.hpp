#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pui/anchor_store.hpp"
#include "pui/error.hpp"
#include "pui/models.hpp"
// after Eigen: resolv.h, pulled in here, defines a _res macro
#include "httplib.h"

namespace pui {

struct HttpResponse {
  int status = 200;
  std::string body;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// JSON request bodies shared by the CLI and the HTTP routes.
struct PredictRequest {
  std::string model;
  VisitRecord visit;
  InterventionScenario scenario;
  double horizon = kDefaultHorizon;
};

inline void from_json(const nlohmann::json& j, PredictRequest& r) {
  r = PredictRequest{};
  r.model = j.value("model", std::string());
  r.visit = j.at("visit").get<VisitRecord>();
  if (j.contains("scenario") && !j.at("scenario").is_null()) r.scenario = j.at("scenario").get<InterventionScenario>();
  r.horizon = j.value("horizon", kDefaultHorizon);
}

/// Predict for one visit, looking up the anchor a two-component model needs.
inline RiskEstimate predict_with_store(const ModelArtifact& a, const VisitRecord& v, const InterventionScenario& s,
                                       const AnchorStore& store, double horizon = kDefaultHorizon) {
  std::optional<Anchor> anchor;
  if (a.variant == Variant::two_component) {
    anchor = store.anchor(v.patient_id);
    if (!anchor) throw AnchorRequiredError("no anchor recorded for patient '" + v.patient_id + "'");
  }
  return predict(a, v, s, anchor ? &*anchor : nullptr, horizon);
}

/// Model name from an artifact path: the file stem.
inline std::string model_name_from_path(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

/// Request handling for the what-if API. Artifacts are immutable after
/// construction; the anchor store is the only shared mutable state.
class Service {
 public:
  Service(std::map<std::string, ModelArtifact> models, AnchorStore& store)
      : models_(std::move(models)), store_(store) {
    if (models_.empty()) throw ValidationError("service needs at least one model");
  }

  const std::map<std::string, ModelArtifact>& models() const { return models_; }

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& query = {}) const {
    try {
      return {200, route(method, path, body, query).dump()};
    } catch (const NotFoundError& e) {
      return error(404, e.what());
    } catch (const AnchorRequiredError& e) {
      return error(404, e.what());
    } catch (const AnchorConflictError& e) {
      return error(409, e.what());
    } catch (const ValidationError& e) {
      return error(400, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(400, e.what());
    } catch (const Error& e) {
      return error(500, e.what());
    }
  }

  /// Route every GET and POST on `server` through handle().
  void mount(httplib::Server& server) const {
    auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> q;
      for (const auto& [k, v] : req.params) q[k] = v;
      auto r = handle(req.method, req.path, req.body, q);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server.Get(".*", adapt);
    server.Post(".*", adapt);
  }

  /// Blocks until server.stop().
  void listen(httplib::Server& server, const std::string& host, int port) const {
    mount(server);
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

 private:
  static HttpResponse error(int status, const std::string& msg) {
    return {status, nlohmann::json{{"error", msg}, {"status", status}}.dump()};
  }

  static nlohmann::json parse_body(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      if (!j.is_object()) throw ValidationError("request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
  }

  const ModelArtifact& model(const std::string& name) const {
    auto it = models_.find(name);
    if (it == models_.end()) throw NotFoundError("unknown model '" + name + "'");
    return it->second;
  }

  PatientRecord patient(const std::string& id) const {
    auto p = store_.patient(id);
    if (!p) throw NotFoundError("unknown patient '" + id + "'");
    return *p;
  }

  nlohmann::json route(const std::string& method, const std::string& path, const std::string& body,
                       const std::map<std::string, std::string>& query) const {
    if (path == "/models") {
      expect(method, "GET", path);
      return list_models();
    }
    if (path == "/predict") {
      expect(method, "POST", path);
      return predict_route(parse_body(body));
    }
    if (path == "/visits") {
      expect(method, "POST", path);
      return visits_route(parse_body(body));
    }
    if (path == "/whatif") {
      expect(method, "POST", path);
      return whatif_route(parse_body(body));
    }
    const std::string prefix = "/patients/", suffix = "/history";
    if (path.size() > prefix.size() + suffix.size() && path.rfind(prefix, 0) == 0 &&
        path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
      expect(method, "GET", path);
      const auto id = path.substr(prefix.size(), path.size() - prefix.size() - suffix.size());
      auto m = query.find("model");
      return history_route(id, m == query.end() ? std::string() : m->second);
    }
    throw NotFoundError("no route for " + method + " " + path);
  }

  static void expect(const std::string& method, const char* want, const std::string& path) {
    if (method != want) throw ValidationError(path + " expects " + want);
  }

  nlohmann::json list_models() const {
    auto out = nlohmann::json::array();
    for (const auto& [name, a] : models_)
      out.push_back({{"name", name},
                     {"variant", to_string(a.variant)},
                     {"combination", to_string(a.combination)},
                     {"created", a.created},
                     {"columns", a.fit.columns},
                     {"n_rows", a.fit.n_rows},
                     {"n_events", a.fit.n_events},
                     {"max_horizon", a.fit.max_time()},
                     {"needs_anchor", a.variant == Variant::two_component}});
    return {{"models", out}};
  }

  nlohmann::json predict_route(const nlohmann::json& body) const {
    const auto req = body.get<PredictRequest>();
    return predict_with_store(model(req.model), req.visit, req.scenario, store_, req.horizon);
  }

  nlohmann::json visits_route(const nlohmann::json& body) const {
    auto visit = body.at("visit").get<VisitRecord>();
    const auto id = body.value("patient_id", visit.patient_id);
    if (visit.patient_id.empty()) visit.patient_id = id;
    if (visit.patient_id != id) throw ValidationError("patient_id does not match the visit's patient_id");
    auto receipt = store_.record_visit(visit, body.value("anchor", false), body.value("reanchor", false));
    nlohmann::json out = receipt;
    out["patient_id"] = id;
    out["visit"] = visit;
    return out;
  }

  nlohmann::json history_route(const std::string& id, const std::string& model_name) const {
    const auto rec = patient(id);
    std::vector<std::string> names;
    if (!model_name.empty()) {
      model(model_name);
      names.push_back(model_name);
    } else {
      for (const auto& [n, _] : models_) names.push_back(n);
    }
    nlohmann::json traj = nlohmann::json::object();
    for (const auto& n : names) {
      const auto& a = model(n);
      auto points = nlohmann::json::array();
      for (const auto& v : rec.visits) {
        nlohmann::json p{{"time", v.time}};
        try {
          p["risk"] = predict(a, v, {}, &rec.anchor).risk;
        } catch (const ValidationError& e) {
          if (!model_name.empty()) throw;
          p["error"] = e.what();
        }
        points.push_back(p);
      }
      traj[n] = points;
    }
    return {{"patient_id", id},
            {"anchor", rec.anchor},
            {"reanchors", rec.reanchors},
            {"visits", rec.visits},
            {"trajectory", traj}};
  }

  nlohmann::json whatif_route(const nlohmann::json& body) const {
    const auto& a = model(body.at("model").get<std::string>());
    const auto id = body.at("patient_id").get<std::string>();
    const auto rec = patient(id);
    const double horizon = body.value("horizon", kDefaultHorizon);
    VisitRecord visit = rec.visits.back();
    if (body.contains("visit")) {
      visit = body.at("visit").get<VisitRecord>();
      if (visit.patient_id.empty()) visit.patient_id = id;
      if (visit.patient_id != id) throw ValidationError("visit belongs to another patient");
    }
    auto scenarios = body.value("scenarios", nlohmann::json::array()).get<std::vector<InterventionScenario>>();
    std::stable_sort(scenarios.begin(), scenarios.end(),
                     [](const auto& x, const auto& y) { return x.label < y.label; });

    InterventionScenario factual;
    factual.label = "factual";
    const auto base = predict(a, visit, factual, &rec.anchor, horizon);
    auto estimates = nlohmann::json::array();
    for (const auto& s : scenarios) {
      InterventionSpec total = s.spec;
      detail::add_spec(total, detail::drug_spec(a.dag, visit, s), 1.0);
      const auto next = scenario_response_visit(a, visit, s);
      const auto est = predict(a, visit, s, &rec.anchor, horizon);
      estimates.push_back({{"label", s.label},
                           {"estimate", est},
                           {"knock_on", knock_on(a.dag, total)},
                           {"response_visit", next},
                           {"sequential_consistency_gap", sequential_consistency_gap(a, visit, next, s, &rec.anchor, horizon)}});
    }
    return {{"model", body.at("model")},
            {"variant", to_string(a.variant)},
            {"patient_id", id},
            {"visit", visit},
            {"anchor", rec.anchor},
            {"factual", base},
            {"estimates", estimates}};
  }

  std::map<std::string, ModelArtifact> models_;
  AnchorStore& store_;
};

}  // namespace pui
