#pragma once

// Subgroup-level analysis: ranking by aggregate metric, centroids,
// centroid representatives, metric extremes and neighbor clusters.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vibe/dataset.hpp"
#include "vibe/search.hpp"
#include "vibe/subgroup.hpp"

namespace vibe {

inline double mean_metric(const Subgroup& s, const Dataset& ds, const std::string& metric) {
  ds.metric(metric);
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& id : s.members) sum += ds.record(ds.index_of(id)).metrics.at(metric);
  return sum / static_cast<double>(s.size());
}

struct RankedSubgroup {
  std::size_t position = 0;  // index into the input list
  std::string id;
  double mean = 0.0;
  std::size_t size = 0;
};

/// Worst-first by mean metric (per the metric's direction); ties by larger
/// size, then id. Empty subgroups go last.
inline std::vector<RankedSubgroup> rank_subgroups(std::span<const Subgroup> subgroups, const Dataset& ds,
                                                  const std::string& metric) {
  const auto& desc = ds.metric(metric);
  std::vector<RankedSubgroup> out;
  out.reserve(subgroups.size());
  for (std::size_t i = 0; i < subgroups.size(); ++i)
    out.push_back({i, subgroups[i].id, mean_metric(subgroups[i], ds, metric), subgroups[i].size()});
  std::stable_sort(out.begin(), out.end(), [&](const RankedSubgroup& a, const RankedSubgroup& b) {
    const bool an = std::isnan(a.mean), bn = std::isnan(b.mean);
    if (an != bn) return bn;
    if (!an && a.mean != b.mean) return desc.worse(a.mean, b.mean);
    if (a.size != b.size) return a.size > b.size;
    return a.id < b.id;
  });
  return out;
}

/// Mean member vector, optionally after dropping the `trim_fraction` of
/// members farthest (cosine distance) from the untrimmed mean.
inline std::vector<double> centroid(const Subgroup& s, const Dataset& ds, double trim_fraction = 0.0) {
  if (s.empty()) throw InvalidArgument("centroid: empty subgroup");
  if (trim_fraction < 0.0 || trim_fraction >= 1.0) throw InvalidArgument("centroid: trim_fraction must lie in [0, 1)");
  const auto& store = ds.store();
  const auto idx = ds.indices_of(s.members);
  auto mean_of = [&](std::span<const std::size_t> rows) {
    std::vector<double> m(store.dim(), 0.0);
    for (auto r : rows) {
      const auto v = store.row(r);
      for (std::size_t d = 0; d < m.size(); ++d) m[d] += v[d];
    }
    for (double& x : m) x /= static_cast<double>(rows.size());
    return m;
  };
  auto full = mean_of(idx);
  const auto drop = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(idx.size()) + 1e-9));
  if (drop == 0) return full;
  if (drop >= idx.size()) throw InvalidArgument("centroid: trimming would empty the subgroup");

  std::vector<std::pair<double, std::size_t>> by_distance;  // (cosine distance, position in members)
  by_distance.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    by_distance.emplace_back(1.0 - cosine_similarity(store.row(idx[i]), std::span<const double>(full)), i);
  std::sort(by_distance.begin(), by_distance.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return s.members[a.second] < s.members[b.second];
  });
  std::vector<std::size_t> kept;
  for (std::size_t i = drop; i < by_distance.size(); ++i) kept.push_back(idx[by_distance[i].second]);
  return mean_of(kept);
}

/// Members ranked by cosine similarity to the centroid (descending, id
/// tie-break), truncated to n.
inline std::vector<std::string> representatives(const Subgroup& s, const Dataset& ds, std::size_t n,
                                                double trim_fraction = 0.0) {
  if (n < 1) throw InvalidArgument("representatives: n must be >= 1");
  if (s.empty()) return {};
  const auto c = centroid(s, ds, trim_fraction);
  std::vector<SearchHit> scored;
  scored.reserve(s.size());
  for (const auto& id : s.members) {
    const auto i = ds.index_of(id);
    scored.push_back({id, cosine_similarity(ds.store().row(i), std::span<const double>(c)), i});
  }
  std::sort(scored.begin(), scored.end(), hit_before);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, scored.size()); ++i) out.push_back(scored[i].sample_id);
  return out;
}

/// Members ordered worst-first under the metric's direction, ties by id.
inline std::vector<std::string> worst_first(const Subgroup& s, const Dataset& ds, const std::string& metric) {
  const auto& desc = ds.metric(metric);
  std::vector<std::pair<double, std::string>> v;
  v.reserve(s.size());
  for (const auto& id : s.members) v.emplace_back(ds.record(ds.index_of(id)).metrics.at(metric), id);
  std::sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return desc.worse(a.first, b.first);
    return a.second < b.second;
  });
  std::vector<std::string> out;
  out.reserve(v.size());
  for (auto& p : v) out.push_back(std::move(p.second));
  return out;
}

struct Extremes {
  std::vector<std::string> worst;
  std::vector<std::string> best;
};

/// The n worst and n best members. `best` is read from the far end of the
/// worst-first order, so with n >= size the two lists are exact reverses.
inline Extremes extremes(const Subgroup& s, const Dataset& ds, const std::string& metric, std::size_t n) {
  if (n < 1) throw InvalidArgument("extremes: n must be >= 1");
  const auto order = worst_first(s, ds, metric);
  const std::size_t take = std::min(n, order.size());
  Extremes e;
  e.worst.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  e.best.assign(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(take));
  return e;
}

struct NeighborCluster {
  std::string subgroup_id;
  double centroid_similarity = 0.0;
};

/// The k clusters whose centroids are most cosine-similar to the target's.
/// The target itself (by id) is never returned; empty candidates are skipped.
inline std::vector<NeighborCluster> neighbor_clusters(const Subgroup& target, std::span<const Subgroup> candidates,
                                                      const Dataset& ds, std::size_t k) {
  const auto tc = centroid(target, ds);
  std::vector<NeighborCluster> out;
  for (const auto& c : candidates) {
    if (c.id == target.id || c.empty()) continue;
    const auto cc = centroid(c, ds);
    out.push_back({c.id, cosine_similarity(tc, cc)});
  }
  std::sort(out.begin(), out.end(), [](const NeighborCluster& a, const NeighborCluster& b) {
    if (a.centroid_similarity != b.centroid_similarity) return a.centroid_similarity > b.centroid_similarity;
    return a.subgroup_id < b.subgroup_id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

}  // namespace vibe
