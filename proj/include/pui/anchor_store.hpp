#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "pui/error.hpp"
#include "pui/models.hpp"

namespace pui {

/// Environment variable naming the default anchor-store file.
inline constexpr const char* kAnchorStoreEnv = "PUI_ANCHOR_STORE";

struct PatientRecord {
  Anchor anchor;
  std::vector<VisitRecord> visits;  // in the order they were recorded
  std::size_t reanchors = 0;
};

/// Outcome of recording a visit.
struct VisitReceipt {
  Anchor anchor;
  bool created_anchor = false;
  bool reanchored = false;
  std::size_t visit_count = 0;
};

/// Per-patient anchors and visit history, persisted as append-only JSON
/// lines. Three record kinds are written:
///
///   {"kind":"visit","patient_id":...,"visit":{...}}
///   {"kind":"anchor","patient_id":...,"anchor":{...}}
///   {"kind":"reanchor","patient_id":...,"anchor":{...}}
///
/// The first visit recorded for a patient fixes the anchor. Later visits
/// never move it; only an explicit reanchor does, and that is logged as its
/// own record. Writers are serialised; readers share the lock.
class AnchorStore {
 public:
  /// In-memory store.
  AnchorStore() = default;

  /// File-backed store; replays an existing file.
  explicit AnchorStore(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        replay(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path_ + ":" + std::to_string(lineno) + ": " + e.what());
      } catch (const Error& e) {
        throw ValidationError(path_ + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  /// Store at $PUI_ANCHOR_STORE when set, otherwise in memory.
  static AnchorStore from_env() {
    const char* p = std::getenv(kAnchorStoreEnv);
    return p && *p ? AnchorStore(p) : AnchorStore();
  }

  AnchorStore(AnchorStore&& o) noexcept : path_(std::move(o.path_)), patients_(std::move(o.patients_)) {}

  const std::string& path() const { return path_; }

  /// Record a visit. `claim_anchor` asserts the visit is the anchor: on an
  /// already-anchored patient that is a conflict unless `reanchor` is set.
  VisitReceipt record_visit(VisitRecord v, bool claim_anchor = false, bool reanchor = false) {
    v.validate();
    if (v.patient_id.empty()) throw ValidationError("visit needs a patient_id");
    std::unique_lock lock(mu_);
    auto it = patients_.find(v.patient_id);
    VisitReceipt r;
    std::vector<nlohmann::json> out;
    if (it == patients_.end()) {
      PatientRecord rec{anchor_from_visit(v), {}, 0};
      out.push_back({{"kind", "anchor"}, {"patient_id", v.patient_id}, {"anchor", rec.anchor}});
      it = patients_.emplace(v.patient_id, std::move(rec)).first;
      r.created_anchor = true;
    } else if (reanchor) {
      it->second.anchor = anchor_from_visit(v);
      ++it->second.reanchors;
      out.push_back({{"kind", "reanchor"}, {"patient_id", v.patient_id}, {"anchor", it->second.anchor}});
      r.reanchored = true;
    } else if (claim_anchor && !same_anchor(it->second.anchor, anchor_from_visit(v))) {
      throw AnchorConflictError("patient " + v.patient_id + " is already anchored at time " +
                                nlohmann::json(it->second.anchor.time).dump() + "; pass reanchor to replace it");
    }
    out.push_back({{"kind", "visit"}, {"patient_id", v.patient_id}, {"visit", v}});
    append(out);
    it->second.visits.push_back(std::move(v));
    r.anchor = it->second.anchor;
    r.visit_count = it->second.visits.size();
    return r;
  }

  /// Replace the anchor without recording a visit.
  Anchor reanchor(const VisitRecord& v) {
    v.validate();
    std::unique_lock lock(mu_);
    auto it = patients_.find(v.patient_id);
    if (it == patients_.end()) throw ValidationError("no record for patient " + v.patient_id);
    it->second.anchor = anchor_from_visit(v);
    ++it->second.reanchors;
    append({{{"kind", "reanchor"}, {"patient_id", v.patient_id}, {"anchor", it->second.anchor}}});
    return it->second.anchor;
  }

  std::optional<Anchor> anchor(const std::string& patient_id) const {
    std::shared_lock lock(mu_);
    auto it = patients_.find(patient_id);
    if (it == patients_.end()) return std::nullopt;
    return it->second.anchor;
  }

  std::optional<PatientRecord> patient(const std::string& patient_id) const {
    std::shared_lock lock(mu_);
    auto it = patients_.find(patient_id);
    if (it == patients_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> patient_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [k, _] : patients_) ids.push_back(k);
    return ids;
  }

 private:
  static bool same_anchor(const Anchor& a, const Anchor& b) {
    return a.time == b.time && a.m == b.m && a.statin == b.statin && a.antihypertensive == b.antihypertensive;
  }

  void replay(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const auto id = j.at("patient_id").get<std::string>();
    if (kind == "visit") {
      auto v = j.at("visit").get<VisitRecord>();
      auto it = patients_.find(id);
      if (it == patients_.end()) throw ValidationError("visit for " + id + " precedes its anchor record");
      it->second.visits.push_back(std::move(v));
    } else if (kind == "anchor") {
      if (patients_.count(id)) throw AnchorConflictError("second anchor record for " + id);
      patients_.emplace(id, PatientRecord{j.at("anchor").get<Anchor>(), {}, 0});
    } else if (kind == "reanchor") {
      auto it = patients_.find(id);
      if (it == patients_.end()) throw ValidationError("reanchor for unknown patient " + id);
      it->second.anchor = j.at("anchor").get<Anchor>();
      ++it->second.reanchors;
    } else {
      throw ValidationError("unknown record kind '" + kind + "'");
    }
  }

  // Called with the writer lock held.
  void append(const std::vector<nlohmann::json>& records) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to anchor store " + path_);
    for (const auto& r : records) out << r.dump() << '\n';
    out.flush();
    if (!out) throw Error("write to anchor store " + path_ + " failed");
  }

  std::string path_;
  std::map<std::string, PatientRecord> patients_;
  mutable std::shared_mutex mu_;
};

inline void to_json(nlohmann::json& j, const VisitReceipt& r) {
  j = {{"anchor", r.anchor},
       {"created_anchor", r.created_anchor},
       {"reanchored", r.reanchored},
       {"visit_count", r.visit_count}};
}

}  // namespace pui
