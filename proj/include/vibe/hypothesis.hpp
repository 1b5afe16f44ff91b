#pragma once

// Hypothesis generation: subgroup summaries and candidate error issues via
// prompt construction, and AUROC confidence ranking of proposed issues.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vibe/analysis.hpp"
#include "vibe/dataset.hpp"
#include "vibe/gateway.hpp"
#include "vibe/search.hpp"
#include "vibe/subgroup.hpp"

namespace vibe {

class MissingCaptionsError : public Error {
 public:
  explicit MissingCaptionsError(std::vector<std::string> ids)
      : Error("missing captions for: " + join(ids, ", ")), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Every member performs identically, so worst/best groups carry no signal.
class UniformPerformanceError : public Error {
 public:
  UniformPerformanceError()
      : Error("uniform performance — use subgroup summary as candidate issue") {}
};

class UnparseableResponseError : public Error {
 public:
  explicit UnparseableResponseError(std::string raw)
      : Error("could not parse any concept from gateway response"), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

inline constexpr double kUniformPerformanceRange = 1e-12;
inline constexpr std::size_t kDefaultContextBudget = 12000;
inline constexpr std::size_t kDefaultPerGroupN = 10;
inline constexpr int kTableSummaryWords = 15;

struct PromptBundle {
  std::string summary_template =
      "I have the following data: {data}. Please summarize all these data using less than {num_word} words.";
  std::string issues_template =
      "The following are the result of captioning two groups of images:\n{captions}.\n\n"
      "I am a machine learning researcher trying to figure out the major differences between these two "
      "groups so I can better understand my data.\n\n"
      "Come up with 10 distinct concepts that are more likely to be true for Group A compared to Group B. "
      "Please write a list of captions.\n\n"
      "Output format: one concept per line, 1-5 words each, no explanations.\n"
      "Correct output:\nwearing a headscarf\ndim indoor lighting\n"
      "Incorrect output:\nGroup A images tend to show people who are wearing headscarves while Group B does not.";
  std::string domain_hint;

  /// Each template must contain each of its placeholders exactly once.
  void check() const {
    auto once = [](const std::string& t, const std::string& ph, const char* which) {
      const auto first = t.find(ph);
      if (first == std::string::npos || t.find(ph, first + 1) != std::string::npos)
        throw ConfigError(std::string(which) + " template must contain " + ph + " exactly once");
    };
    once(summary_template, "{data}", "summary");
    once(summary_template, "{num_word}", "summary");
    once(issues_template, "{captions}", "issues");
  }
};

namespace detail {

inline std::string replace_once(std::string text, const std::string& placeholder, const std::string& value) {
  const auto pos = text.find(placeholder);
  if (pos != std::string::npos) text.replace(pos, placeholder.size(), value);
  return text;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a prompt file made of `[summary]`, `[issues]` and `[domain_hint]`
/// sections. Missing sections keep their defaults.
inline PromptBundle parse_prompt_bundle(const std::string& text) {
  PromptBundle b;
  std::map<std::string, std::string> sections;
  std::string current;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      sections[current];
      continue;
    }
    if (current.empty()) continue;
    auto& s = sections[current];
    if (!s.empty()) s += '\n';
    s += line;
  }
  for (auto& [name, body] : sections) {
    body = detail::trim(body);
    if (name == "summary") b.summary_template = body;
    else if (name == "issues") b.issues_template = body;
    else if (name == "domain_hint") b.domain_hint = body;
    else throw ConfigError("unknown prompt section: [" + name + "]");
  }
  b.check();
  return b;
}

inline PromptBundle load_prompt_bundle(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read prompt file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_prompt_bundle(ss.str());
}

struct ExtremeSplit {
  std::vector<std::string> group_a;  // worst performers
  std::vector<std::string> group_b;  // best performers
  std::string metric_name;
  std::size_t per_group_n = kDefaultPerGroupN;
};

inline json to_json(const ExtremeSplit& s) {
  return json{{"group_a", s.group_a}, {"group_b", s.group_b}, {"metric_name", s.metric_name},
              {"per_group_n", s.per_group_n}};
}

/// Worst and best min(n, floor(|members|/2)) members under the metric.
inline ExtremeSplit split_extremes(const Subgroup& s, const Dataset& ds, const std::string& metric,
                                   std::size_t per_group_n = kDefaultPerGroupN) {
  ds.metric(metric);
  if (s.size() < 2) throw InvalidArgument("split_extremes: subgroup needs at least 2 members");
  if (per_group_n < 1) throw InvalidArgument("split_extremes: per_group_n must be >= 1");
  const auto order = worst_first(s, ds, metric);
  const std::size_t count = std::min(per_group_n, order.size() / 2);
  ExtremeSplit out;
  out.metric_name = metric;
  out.per_group_n = per_group_n;
  out.group_a.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  out.group_b.assign(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

/// Captioned members in order of centroid proximity, added while the total
/// caption length stays within the budget. Stops at the first caption that
/// does not fit; if that leaves nothing, falls back to the nearest member
/// whose caption fits on its own.
inline std::vector<std::string> select_for_context(const Subgroup& s, const Dataset& ds, std::size_t budget_chars,
                                                   double trim_fraction = 0.0) {
  if (budget_chars == 0) throw InvalidArgument("select_for_context: budget must be > 0");
  if (s.empty()) return {};
  const auto order = representatives(s, ds, s.size(), trim_fraction);
  std::vector<std::string> out;
  std::size_t used = 0;
  for (const auto& id : order) {
    const auto& cap = ds.record(ds.index_of(id)).caption;
    if (!cap || cap->empty()) continue;
    if (used + cap->size() > budget_chars) break;
    used += cap->size();
    out.push_back(id);
  }
  if (!out.empty()) return out;
  for (const auto& id : order) {
    const auto& cap = ds.record(ds.index_of(id)).caption;
    if (cap && !cap->empty() && cap->size() <= budget_chars) return {id};
  }
  return out;
}

inline std::string build_summary_prompt(std::span<const std::string> captions, int max_words,
                                        const PromptBundle& bundle) {
  if (captions.empty()) throw InvalidArgument("build_summary_prompt: no captions");
  std::string data;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (i) data += "; ";
    data += captions[i];
  }
  std::string prompt = detail::replace_once(bundle.summary_template, "{data}", data);
  prompt = detail::replace_once(prompt, "{num_word}", std::to_string(max_words));
  if (!bundle.domain_hint.empty()) prompt += " " + bundle.domain_hint;
  return prompt;
}

/// Fills the caption placeholder with one "Group A: ..." line per worst
/// member followed by one "Group B: ..." line per best member.
inline std::string build_issues_prompt(const ExtremeSplit& split, const Dataset& ds, const PromptBundle& bundle) {
  std::vector<std::string> missing;
  std::vector<std::string> lines;
  auto add = [&](const std::vector<std::string>& ids, const char* label) {
    for (const auto& id : ids) {
      const auto& cap = ds.record(ds.index_of(id)).caption;
      if (!cap || cap->empty()) missing.push_back(id);
      else lines.push_back(std::string("Group ") + label + ": " + *cap);
    }
  };
  add(split.group_a, "A");
  add(split.group_b, "B");
  if (!missing.empty()) throw MissingCaptionsError(std::move(missing));
  return detail::replace_once(bundle.issues_template, "{captions}", join(lines, "; "));
}

/// Area under the ROC curve of `scores` as a classifier of group A versus
/// group B: the fraction of (a, b) pairs with a > b, ties counting one half.
/// Computed from midranks, so it is exact for integer-valued pair counts.
template <typename T>
double auroc(std::span<const T> group_a, std::span<const T> group_b) {
  if (group_a.empty() || group_b.empty()) throw InvalidArgument("auroc: both groups must be nonempty");
  std::vector<std::pair<double, bool>> all;  // (score, is_a)
  all.reserve(group_a.size() + group_b.size());
  for (const auto& v : group_a) all.emplace_back(static_cast<double>(v), true);
  for (const auto& v : group_b) all.emplace_back(static_cast<double>(v), false);
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  // Twice the rank sum of group A, with ties sharing the average rank.
  double twice_rank_sum_a = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t in_a = 0;
    while (j < all.size() && all[j].first == all[i].first) in_a += all[j++].second ? 1 : 0;
    // ranks i+1 .. j, average (i + 1 + j) / 2
    twice_rank_sum_a += static_cast<double>(in_a) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double na = static_cast<double>(group_a.size());
  const double nb = static_cast<double>(group_b.size());
  const double u = (twice_rank_sum_a - na * (na + 1.0)) / 2.0;
  return u / (na * nb);
}

inline double auroc(const std::vector<double>& a, const std::vector<double>& b) {
  return auroc(std::span<const double>(a), std::span<const double>(b));
}

struct IssueScore {
  double confidence = 0.0;
  std::vector<double> similarities_a;
  std::vector<double> similarities_b;
};

/// Similarities of a (precomputed) issue embedding to both split groups and
/// their AUROC.
inline IssueScore score_embedding(std::span<const double> issue_embedding, const ExtremeSplit& split,
                                  const Dataset& ds) {
  if (split.group_a.empty() || split.group_b.empty()) throw InvalidArgument("score_issue: empty split");
  IssueScore s;
  for (const auto& id : split.group_a)
    s.similarities_a.push_back(cosine_similarity(issue_embedding, ds.store().row(ds.index_of(id))));
  for (const auto& id : split.group_b)
    s.similarities_b.push_back(cosine_similarity(issue_embedding, ds.store().row(ds.index_of(id))));
  s.confidence = auroc(s.similarities_a, s.similarities_b);
  return s;
}

inline double score_issue(const std::string& issue_text, const ExtremeSplit& split, const Dataset& ds,
                          Gateway& gateway) {
  if (split.group_a.empty() || split.group_b.empty()) throw InvalidArgument("score_issue: empty split");
  const auto emb = gateway.embed_text(issue_text);
  return score_embedding(emb, split, ds).confidence;
}

/// One concept per line; leading enumeration ("1.", "2)", "-", "*") and
/// surrounding quotes are stripped.
inline std::vector<std::string> parse_concept_list(const std::string& response) {
  static const std::regex enumeration(R"(^\s*(?:\d+\s*[\.\):]|[-*•]+)\s*)");
  std::vector<std::string> out;
  std::istringstream in(response);
  std::string line;
  while (std::getline(in, line)) {
    line = std::regex_replace(line, enumeration, "", std::regex_constants::format_first_only);
    line = detail::trim(line);
    while (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front())
      line = detail::trim(line.substr(1, line.size() - 2));
    if (line.empty()) continue;
    if (std::find(out.begin(), out.end(), line) == out.end()) out.push_back(line);
  }
  return out;
}

inline std::size_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

/// Sorts issues by confidence descending, text ascending on ties.
inline void sort_issues(std::vector<CandidateIssue>& issues) {
  std::stable_sort(issues.begin(), issues.end(), [](const CandidateIssue& a, const CandidateIssue& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.text < b.text;
  });
}

/// Full issue-proposal pipeline: extreme split, prompt, gateway completion,
/// parsing (at most 10 concepts) and AUROC ranking.
inline std::vector<CandidateIssue> propose_issues(const Subgroup& s, const Dataset& ds, const std::string& metric,
                                                  Gateway& gateway, const PromptBundle& bundle,
                                                  std::size_t per_group_n = kDefaultPerGroupN) {
  ds.metric(metric);
  if (s.size() < 2) throw InvalidArgument("propose_issues: subgroup needs at least 2 members");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& id : s.members) {
    const double v = ds.record(ds.index_of(id)).metrics.at(metric);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < kUniformPerformanceRange) throw UniformPerformanceError();

  const auto split = split_extremes(s, ds, metric, per_group_n);
  const auto prompt = build_issues_prompt(split, ds, bundle);
  const auto response = gateway.complete(prompt);
  auto concepts = parse_concept_list(response);
  if (concepts.empty()) throw UnparseableResponseError(response);
  if (concepts.size() > 10) concepts.resize(10);

  const json provenance{{"subgroup", s.id},
                        {"split", to_json(split)},
                        {"gateway", to_json(gateway.identity())},
                        {"prompt_hash", stable_hash(prompt)}};
  std::vector<CandidateIssue> issues;
  for (const auto& text : concepts) {
    CandidateIssue c;
    c.text = text;
    c.confidence = score_issue(text, split, ds, gateway);
    c.exceeds_word_limit = word_count(text) > 5;
    c.provenance = provenance;
    issues.push_back(std::move(c));
  }
  sort_issues(issues);
  return issues;
}

struct SummaryOptions {
  int max_words = kTableSummaryWords;
  std::size_t budget_chars = kDefaultContextBudget;
  double trim_fraction = 0.0;
  bool force = false;
};

/// Summarizes a subgroup from the captions of its most central members and
/// caches the text on the subgroup. A cached summary is reused unless
/// `force` is set or it came from a different gateway identity.
inline std::string summarize_subgroup(Subgroup& s, const Dataset& ds, Gateway& gateway, const PromptBundle& bundle,
                                      const SummaryOptions& opts = {}) {
  const json identity = to_json(gateway.identity());
  if (!opts.force && s.cache.summary_text && s.cache.summary_provenance.is_object() &&
      s.cache.summary_provenance.value("gateway", json()) == identity)
    return *s.cache.summary_text;

  const bool any_captioned = std::any_of(s.members.begin(), s.members.end(), [&](const std::string& id) {
    const auto& c = ds.record(ds.index_of(id)).caption;
    return c && !c->empty();
  });
  if (!any_captioned) throw MissingCaptionsError(s.members);

  const auto chosen = select_for_context(s, ds, opts.budget_chars, opts.trim_fraction);
  if (chosen.empty())
    throw BudgetError("no member caption fits the context budget of " + std::to_string(opts.budget_chars));
  std::vector<std::string> captions;
  for (const auto& id : chosen) captions.push_back(*ds.record(ds.index_of(id)).caption);
  const auto prompt = build_summary_prompt(captions, opts.max_words, bundle);
  auto text = gateway.complete(prompt);

  s.cache.summary_text = text;
  s.cache.summary_provenance = json{{"gateway", identity},
                                    {"max_words", opts.max_words},
                                    {"prompt_hash", stable_hash(prompt)},
                                    {"context_ids", chosen}};
  return text;
}

}  // namespace vibe
