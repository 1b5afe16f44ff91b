#pragma once

// Embedded persistence for one dataset workspace: a single-file JSON
// document store for subgroups, settings and session state, plus an
// append-only history log.

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibe/dataset.hpp"
#include "vibe/subgroup.hpp"

namespace vibe::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Writes `text` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial document.
inline void write_atomically(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct PersistedSubgroup {
  Subgroup subgroup;
  std::string created_at;
};

inline json to_json(const PersistedSubgroup& p) {
  return json{{"subgroup", vibe::to_json(p.subgroup)}, {"created_at", p.created_at}};
}

inline PersistedSubgroup persisted_from_json(const json& j) {
  return PersistedSubgroup{subgroup_from_json(j.at("subgroup")), j.value("created_at", std::string())};
}

struct Settings {
  std::optional<std::string> metric;
  bool invert_colors = false;
  std::optional<std::pair<double, double>> metric_range;
  std::optional<double> similarity_threshold;

  bool operator==(const Settings&) const = default;
};

inline json to_json(const Settings& s) {
  json j;
  j["metric"] = s.metric ? json(*s.metric) : json(nullptr);
  j["invert_colors"] = s.invert_colors;
  j["metric_range"] = s.metric_range ? json{s.metric_range->first, s.metric_range->second} : json(nullptr);
  j["similarity_threshold"] = s.similarity_threshold ? json(*s.similarity_threshold) : json(nullptr);
  return j;
}

/// Parses settings, starting from `base` so partial updates keep the rest.
inline Settings settings_from_json(const json& j, Settings base = {}) {
  if (!j.is_object()) throw InvalidArgument("settings must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "metric") {
      base.metric = v.is_null() ? std::nullopt : std::optional(v.get<std::string>());
    } else if (key == "invert_colors") {
      base.invert_colors = v.get<bool>();
    } else if (key == "metric_range") {
      if (v.is_null()) {
        base.metric_range.reset();
      } else {
        const auto r = v.get<std::vector<double>>();
        if (r.size() != 2 || r[0] > r[1]) throw InvalidArgument("metric_range must be [lo, hi] with lo <= hi");
        base.metric_range = std::pair{r[0], r[1]};
      }
    } else if (key == "similarity_threshold") {
      if (v.is_null()) {
        base.similarity_threshold.reset();
      } else {
        const double t = v.get<double>();
        if (t < -1.0 || t > 1.0) throw InvalidArgument("similarity_threshold must lie in [-1, 1]");
        base.similarity_threshold = t;
      }
    } else {
      throw InvalidArgument("unknown setting: " + key);
    }
  }
  return base;
}

/// Documents keyed by id in one JSON file. Many readers, one writer; every
/// mutation rewrites the file atomically before returning.
class DocumentStore {
 public:
  explicit DocumentStore(fs::path file) : file_(std::move(file)) {
    if (!fs::exists(file_)) return;
    json j;
    try {
      j = json::parse(detail::read_file(file_));
    } catch (const json::exception& e) {
      throw DataError("corrupt store " + file_.string() + ": " + e.what(), file_.string());
    }
    const json subgroups = j.value("subgroups", json::object());
    for (const auto& [id, doc] : subgroups.items())
      subgroups_.emplace(id, persisted_from_json(doc));
    if (j.contains("settings")) settings_ = settings_from_json(j["settings"]);
    session_ = j.value("session", json::object());
  }

  const fs::path& file() const noexcept { return file_; }

  std::optional<PersistedSubgroup> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = subgroups_.find(id);
    if (it == subgroups_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return subgroups_.count(id) > 0;
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : subgroups_) out.push_back(id);
    return out;
  }

  void put(const PersistedSubgroup& p) {
    std::unique_lock lock(mutex_);
    subgroups_[p.subgroup.id] = p;
    flush_locked();
  }

  /// Inserts unless the id exists; returns the stored document either way.
  PersistedSubgroup insert_if_absent(const PersistedSubgroup& p) {
    std::unique_lock lock(mutex_);
    auto [it, inserted] = subgroups_.emplace(p.subgroup.id, p);
    if (inserted) flush_locked();
    return it->second;
  }

  /// Inserts every absent document with a single file write.
  void insert_all_if_absent(const std::vector<PersistedSubgroup>& docs) {
    std::unique_lock lock(mutex_);
    bool changed = false;
    for (const auto& p : docs) changed |= subgroups_.emplace(p.subgroup.id, p).second;
    if (changed) flush_locked();
  }

  Settings settings() const {
    std::shared_lock lock(mutex_);
    return settings_;
  }

  void set_settings(const Settings& s) {
    std::unique_lock lock(mutex_);
    settings_ = s;
    flush_locked();
  }

  json session() const {
    std::shared_lock lock(mutex_);
    return session_;
  }

  void set_session_field(const std::string& key, json value) {
    std::unique_lock lock(mutex_);
    session_[key] = std::move(value);
    flush_locked();
  }

  json to_document() const {
    std::shared_lock lock(mutex_);
    return document_locked();
  }

 private:
  json document_locked() const {
    json subgroups = json::object();
    for (const auto& [id, p] : subgroups_) subgroups[id] = to_json(p);
    return json{{"version", 1}, {"subgroups", subgroups}, {"settings", to_json(settings_)}, {"session", session_}};
  }

  void flush_locked() { write_atomically(file_, document_locked().dump(1) + "\n"); }

  fs::path file_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, PersistedSubgroup> subgroups_;
  Settings settings_;
  json session_ = json::object();
};

struct HistoryEntry {
  std::size_t seq = 0;
  std::string subgroup_id;
  std::string timestamp;

  bool operator==(const HistoryEntry&) const = default;
};

inline json to_json(const HistoryEntry& e) {
  return json{{"seq", e.seq}, {"subgroup_id", e.subgroup_id}, {"timestamp", e.timestamp}};
}

/// Append-only session history, one JSON object per line. Opening the log
/// replays it.
class HistoryLog {
 public:
  explicit HistoryLog(fs::path file) : file_(std::move(file)) { entries_ = replay(file_); }

  static std::vector<HistoryEntry> replay(const fs::path& file) {
    std::vector<HistoryEntry> out;
    if (!fs::exists(file)) return out;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        break;  // torn final line from an interrupted append
      }
      out.push_back({j.at("seq").get<std::size_t>(), j.at("subgroup_id").get<std::string>(),
                     j.at("timestamp").get<std::string>()});
    }
    return out;
  }

  HistoryEntry append(const std::string& subgroup_id, const std::string& timestamp) {
    std::unique_lock lock(mutex_);
    HistoryEntry e{entries_.size(), subgroup_id, timestamp};
    if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
    std::ofstream out(file_, std::ios::app);
    out << to_json(e).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to " + file_.string());
    entries_.push_back(e);
    return e;
  }

  std::vector<HistoryEntry> entries() const {
    std::shared_lock lock(mutex_);
    return entries_;
  }

 private:
  fs::path file_;
  mutable std::shared_mutex mutex_;
  std::vector<HistoryEntry> entries_;
};

}  // namespace vibe::service
