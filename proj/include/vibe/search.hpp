#pragma once

// Exact cosine-similarity retrieval over an EmbeddingStore and concept
// (text query) subgroup creation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vibe/dataset.hpp"
#include "vibe/gateway.hpp"
#include "vibe/subgroup.hpp"

namespace vibe {

/// a.b / (|a| |b|). Accumulates in double whatever the element type.
template <typename T, typename U>
double cosine_similarity(std::span<const T> a, std::span<const U> b) {
  if (a.size() != b.size())
    throw InvalidArgument("cosine_similarity: dim mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine_similarity(std::span<const double>(a), std::span<const double>(b));
}

struct SearchHit {
  std::string sample_id;
  double similarity = 0.0;
  std::size_t index = 0;

  bool operator==(const SearchHit&) const = default;
};

/// Orders hits by similarity descending, then sample id ascending.
inline bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.sample_id < b.sample_id;
}

/// Exhaustive scan. `ids[i]` names row i of `store`.
inline std::vector<SearchHit> top_k(const EmbeddingStore& store, std::span<const std::string> ids,
                                    std::span<const double> query, std::size_t k,
                                    std::optional<double> min_similarity = std::nullopt) {
  if (query.size() != store.dim())
    throw InvalidArgument("top_k: query dim " + std::to_string(query.size()) + " != store dim " +
                          std::to_string(store.dim()));
  double qn = 0.0;
  for (double x : query) qn += x * x;
  if (qn == 0.0) throw InvalidArgument("top_k: zero query vector");
  qn = std::sqrt(qn);

  std::vector<SearchHit> hits;
  hits.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto row = store.row(i);
    double dot = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) dot += row[d] * query[d];
    const double sim = dot / (store.norm(i) * qn);
    if (min_similarity && sim < *min_similarity) continue;
    hits.push_back({ids[i], sim, i});
  }
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), hit_before);
  hits.resize(keep);
  return hits;
}

inline std::vector<SearchHit> top_k(const Dataset& ds, std::span<const double> query, std::size_t k,
                                    std::optional<double> min_similarity = std::nullopt) {
  const auto ids = ds.ids();
  return top_k(ds.store(), ids, query, k, min_similarity);
}

struct MetricFilter {
  std::string metric;
  double lo = 0.0;
  double hi = 0.0;
};

struct ConceptQuery {
  std::string text;
  std::size_t k = 50;
  std::optional<double> min_similarity;
  std::optional<MetricFilter> metric_filter;

  void check() const {
    if (text.empty()) throw InvalidArgument("concept query text must be nonempty");
    if (k < 1) throw InvalidArgument("concept query k must be >= 1");
    if (min_similarity && (*min_similarity < -1.0 || *min_similarity > 1.0))
      throw InvalidArgument("min_similarity must lie in [-1, 1]");
    if (metric_filter && metric_filter->lo > metric_filter->hi)
      throw InvalidArgument("metric filter range requires lo <= hi");
  }
};

inline json to_json(const ConceptQuery& q) {
  json j{{"text", q.text}, {"k", q.k}};
  j["min_similarity"] = q.min_similarity ? json(*q.min_similarity) : json(nullptr);
  if (q.metric_filter)
    j["metric_filter"] = {{"metric", q.metric_filter->metric},
                          {"range", {q.metric_filter->lo, q.metric_filter->hi}}};
  else
    j["metric_filter"] = nullptr;
  return j;
}

inline ConceptQuery concept_query_from_json(const json& j) {
  ConceptQuery q;
  q.text = j.at("text").get<std::string>();
  q.k = j.value("k", q.k);
  if (j.contains("min_similarity") && !j["min_similarity"].is_null())
    q.min_similarity = j["min_similarity"].get<double>();
  if (j.contains("metric_filter") && !j["metric_filter"].is_null()) {
    const auto& f = j["metric_filter"];
    const auto range = f.at("range").get<std::vector<double>>();
    if (range.size() != 2) throw InvalidArgument("metric_filter.range must be [lo, hi]");
    q.metric_filter = MetricFilter{f.at("metric").get<std::string>(), range[0], range[1]};
  }
  return q;
}

struct ConceptSearchResult {
  Subgroup subgroup;
  std::vector<SearchHit> hits;  // after filtering, rank order
};

/// Embeds the query text through the gateway, retrieves the top-k samples
/// and applies the optional metric filter. An empty result is not an error.
inline ConceptSearchResult concept_search(const Dataset& ds, const ConceptQuery& query, Gateway& gateway) {
  query.check();
  if (query.metric_filter) ds.metric(query.metric_filter->metric);
  const auto embedding = gateway.embed_text(query.text);
  auto hits = top_k(ds, embedding, query.k, query.min_similarity);
  if (query.metric_filter) {
    const auto& f = *query.metric_filter;
    std::erase_if(hits, [&](const SearchHit& h) {
      const double v = ds.record(h.index).metrics.at(f.metric);
      return v < f.lo || v > f.hi;
    });
  }

  ConceptSearchResult out;
  Subgroup& s = out.subgroup;
  s.kind = SubgroupKind::Concept;
  s.provenance = json{{"query", to_json(query)}, {"gateway", to_json(gateway.identity())}};
  s.id = "concept-" + stable_hash(s.provenance.dump()).substr(0, 12);
  for (const auto& h : hits) s.members.push_back(h.sample_id);
  out.hits = std::move(hits);
  return out;
}

}  // namespace vibe
