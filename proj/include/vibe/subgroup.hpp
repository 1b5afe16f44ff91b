#pragma once

// Subgroup: a named sample set with provenance and write-once analysis cache.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibe/common.hpp"

namespace vibe {

using json = nlohmann::json;

enum class SubgroupKind { Cluster, Concept, Custom };

inline std::string to_string(SubgroupKind k) {
  switch (k) {
    case SubgroupKind::Cluster: return "cluster";
    case SubgroupKind::Concept: return "concept";
    case SubgroupKind::Custom: return "custom";
  }
  return "custom";
}

inline SubgroupKind parse_subgroup_kind(const std::string& s) {
  if (s == "cluster") return SubgroupKind::Cluster;
  if (s == "concept") return SubgroupKind::Concept;
  if (s == "custom") return SubgroupKind::Custom;
  throw InvalidArgument("unknown subgroup kind: " + s);
}

/// A short concept proposed as a cause of poor performance, with its
/// AUROC confidence.
struct CandidateIssue {
  std::string text;
  double confidence = 0.0;
  bool exceeds_word_limit = false;
  /// {subgroup, split, gateway, prompt_hash}
  json provenance = json::object();
};

inline json to_json(const CandidateIssue& c) {
  return json{{"text", c.text},
              {"confidence", c.confidence},
              {"exceeds_word_limit", c.exceeds_word_limit},
              {"provenance", c.provenance}};
}

inline CandidateIssue issue_from_json(const json& j) {
  CandidateIssue c;
  c.text = j.at("text").get<std::string>();
  c.confidence = j.at("confidence").get<double>();
  c.exceeds_word_limit = j.value("exceeds_word_limit", false);
  c.provenance = j.value("provenance", json::object());
  return c;
}

struct SubgroupCache {
  std::optional<std::string> summary_text;
  /// Identity + parameters the summary was produced with; a summary from a
  /// different gateway identity is never reused.
  json summary_provenance;
  std::optional<std::vector<std::string>> representative_ids;
  std::optional<std::vector<std::string>> extreme_ids;
  std::optional<std::vector<CandidateIssue>> issues;
};

struct Subgroup {
  std::string id;
  SubgroupKind kind = SubgroupKind::Custom;
  std::vector<std::string> members;
  json provenance = json::object();
  SubgroupCache cache;

  std::size_t size() const noexcept { return members.size(); }
  bool empty() const noexcept { return members.empty(); }
};

inline json to_json(const Subgroup& s) {
  json cache = json::object();
  cache["summary_text"] = s.cache.summary_text ? json(*s.cache.summary_text) : json(nullptr);
  cache["summary_provenance"] = s.cache.summary_provenance.is_null() ? json(nullptr) : s.cache.summary_provenance;
  cache["representative_ids"] = s.cache.representative_ids ? json(*s.cache.representative_ids) : json(nullptr);
  cache["extreme_ids"] = s.cache.extreme_ids ? json(*s.cache.extreme_ids) : json(nullptr);
  if (s.cache.issues) {
    json issues = json::array();
    for (const auto& i : *s.cache.issues) issues.push_back(to_json(i));
    cache["issues"] = issues;
  } else {
    cache["issues"] = nullptr;
  }
  return json{{"id", s.id},
              {"kind", to_string(s.kind)},
              {"members", s.members},
              {"provenance", s.provenance},
              {"cache", cache}};
}

inline Subgroup subgroup_from_json(const json& j) {
  Subgroup s;
  s.id = j.at("id").get<std::string>();
  s.kind = parse_subgroup_kind(j.at("kind").get<std::string>());
  s.members = j.at("members").get<std::vector<std::string>>();
  s.provenance = j.value("provenance", json::object());
  if (j.contains("cache") && j["cache"].is_object()) {
    const auto& c = j["cache"];
    if (c.contains("summary_text") && c["summary_text"].is_string())
      s.cache.summary_text = c["summary_text"].get<std::string>();
    if (c.contains("summary_provenance") && !c["summary_provenance"].is_null())
      s.cache.summary_provenance = c["summary_provenance"];
    if (c.contains("representative_ids") && c["representative_ids"].is_array())
      s.cache.representative_ids = c["representative_ids"].get<std::vector<std::string>>();
    if (c.contains("extreme_ids") && c["extreme_ids"].is_array())
      s.cache.extreme_ids = c["extreme_ids"].get<std::vector<std::string>>();
    if (c.contains("issues") && c["issues"].is_array()) {
      std::vector<CandidateIssue> issues;
      for (const auto& i : c["issues"]) issues.push_back(issue_from_json(i));
      s.cache.issues = std::move(issues);
    }
  }
  return s;
}

/// Custom subgroup from a manual selection. The id is derived from the
/// member list so the same selection always maps to the same subgroup.
inline Subgroup make_custom_subgroup(std::vector<std::string> members, std::string label = {}) {
  Subgroup s;
  s.kind = SubgroupKind::Custom;
  s.id = "custom-" + stable_hash(join(members, "\n") + "|" + label).substr(0, 12);
  s.provenance = json{{"selection", "manual"}, {"label", label}};
  s.members = std::move(members);
  return s;
}

}  // namespace vibe
