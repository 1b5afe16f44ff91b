#pragma once

// Seeded k-means (k-means++ initialisation, Lloyd iterations) and DBSCAN
// over either the full embedding space or a 2-D projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vibe/common.hpp"
#include "vibe/dataset.hpp"
#include "vibe/projection.hpp"
#include "vibe/subgroup.hpp"

namespace vibe {

enum class ClusterMethod { KMeans, Dbscan };
enum class ClusterSpace { FullDim, Projected2d };

struct ClusteringConfig {
  ClusterMethod method = ClusterMethod::KMeans;
  std::size_t k = 20;
  ClusterSpace space = ClusterSpace::FullDim;
  std::uint64_t seed = 42;
  int kmeans_max_iters = 300;
  double kmeans_tol = 1e-4;
  double dbscan_eps = 0.5;
  std::size_t dbscan_min_pts = 5;

  void check(std::size_t n) const {
    if (method == ClusterMethod::KMeans) {
      if (k < 1) throw InvalidArgument("k must be >= 1");
      if (k > n) throw InvalidArgument("k (" + std::to_string(k) + ") exceeds sample count (" + std::to_string(n) + ")");
      if (kmeans_max_iters < 1) throw InvalidArgument("kmeans_max_iters must be >= 1");
      if (kmeans_tol < 0) throw InvalidArgument("kmeans_tol must be >= 0");
    } else {
      if (!(dbscan_eps > 0)) throw InvalidArgument("dbscan_eps must be > 0");
      if (dbscan_min_pts < 1) throw InvalidArgument("dbscan_min_pts must be >= 1");
    }
  }
};

inline json to_json(const ClusteringConfig& c) {
  json j{{"method", c.method == ClusterMethod::KMeans ? "kmeans" : "dbscan"},
         {"space", c.space == ClusterSpace::FullDim ? "full_dim" : "projected_2d"},
         {"seed", c.seed}};
  if (c.method == ClusterMethod::KMeans) {
    j["k"] = c.k;
    j["kmeans_max_iters"] = c.kmeans_max_iters;
    j["kmeans_tol"] = c.kmeans_tol;
  } else {
    j["dbscan_eps"] = c.dbscan_eps;
    j["dbscan_min_pts"] = c.dbscan_min_pts;
  }
  return j;
}

inline ClusteringConfig clustering_config_from_json(const json& j) {
  ClusteringConfig c;
  const auto method = j.value("method", std::string("kmeans"));
  if (method == "kmeans") c.method = ClusterMethod::KMeans;
  else if (method == "dbscan") c.method = ClusterMethod::Dbscan;
  else throw InvalidArgument("unknown clustering method: " + method);
  const auto space = j.value("space", std::string("full_dim"));
  if (space == "full_dim") c.space = ClusterSpace::FullDim;
  else if (space == "projected_2d") c.space = ClusterSpace::Projected2d;
  else throw InvalidArgument("unknown clustering space: " + space);
  c.k = j.value("k", c.k);
  c.seed = j.value("seed", c.seed);
  c.kmeans_max_iters = j.value("kmeans_max_iters", c.kmeans_max_iters);
  c.kmeans_tol = j.value("kmeans_tol", c.kmeans_tol);
  c.dbscan_eps = j.value("dbscan_eps", c.dbscan_eps);
  c.dbscan_min_pts = j.value("dbscan_min_pts", c.dbscan_min_pts);
  return c;
}

/// Dense row-major point set used by the clustering kernels.
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t size() const { return dim ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct KMeansResult {
  std::vector<std::size_t> labels;
  PointSet centers;
  /// Inertia after each assignment step.
  std::vector<double> inertia_history;
  int iterations = 0;
};

namespace detail {

inline PointSet kmeans_plus_plus(const PointSet& pts, std::size_t k, Rng& rng) {
  const std::size_t n = pts.size();
  PointSet centers{pts.dim, {}};
  centers.values.reserve(k * pts.dim);
  std::vector<char> chosen(n, 0);
  auto take = [&](std::size_t i) {
    chosen[i] = 1;
    const auto r = pts.row(i);
    centers.values.insert(centers.values.end(), r.begin(), r.end());
  };
  take(static_cast<std::size_t>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(pts.row(i), centers.row(0));
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n)  // rounding at the tail
        for (std::size_t i = n; i-- > 0;)
          if (!chosen[i] && d2[i] > 0.0) {
            pick = i;
            break;
          }
    } else {
      // Remaining points coincide with centers; pick uniformly among the unchosen.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[static_cast<std::size_t>(rng.below(rest.size()))];
    }
    take(pick);
    const auto c = centers.row(centers.size() - 1);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(pts.row(i), c));
  }
  return centers;
}

}  // namespace detail

/// Lloyd's algorithm from a k-means++ start. Empty clusters are re-seeded
/// with the point farthest from its current center (taken from a cluster
/// with more than one member), which never increases inertia.
inline KMeansResult kmeans(const PointSet& pts, std::size_t k, std::uint64_t seed, int max_iters = 300,
                           double tol = 1e-4) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts.dim;
  if (k < 1 || k > n) throw InvalidArgument("kmeans: k must lie in [1, N]");
  Rng rng(seed);
  KMeansResult res;
  res.centers = detail::kmeans_plus_plus(pts, k, rng);
  res.labels.assign(n, 0);

  // Tolerance is relative to the data's mean per-feature variance.
  double mean_var = 0.0;
  {
    std::vector<double> mu(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d) mu[d] += pts.row(i)[d];
    for (double& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d) mean_var += (pts.row(i)[d] - mu[d]) * (pts.row(i)[d] - mu[d]);
    mean_var /= static_cast<double>(n * dim);
  }
  const double shift_tol = tol * mean_var;

  std::vector<double> best(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    res.iterations = iter + 1;
    // Assignment; ties go to the lowest cluster index.
    for (std::size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      std::size_t bc = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(pts.row(i), res.centers.row(c));
        if (d < bd) {
          bd = d;
          bc = c;
        }
      }
      res.labels[i] = bc;
      best[i] = bd;
    }
    // Empty-cluster repair.
    std::vector<std::size_t> counts(k, 0);
    for (auto l : res.labels) ++counts[l];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[res.labels[i]] > 1 && (far == n || best[i] > best[far])) far = i;
      --counts[res.labels[far]];
      res.labels[far] = c;
      counts[c] = 1;
      best[far] = 0.0;
      std::copy(pts.row(far).begin(), pts.row(far).end(), res.centers.values.begin() + static_cast<std::ptrdiff_t>(c * dim));
    }
    double inertia = 0.0;
    for (double b : best) inertia += b;
    res.inertia_history.push_back(inertia);

    // Update.
    std::vector<double> sums(k * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = pts.row(i);
      double* s = sums.data() + res.labels[i] * dim;
      for (std::size_t d = 0; d < dim; ++d) s[d] += r[d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = sums[c * dim + d] / static_cast<double>(counts[c]);
        const double delta = v - res.centers.values[c * dim + d];
        shift += delta * delta;
        res.centers.values[c * dim + d] = v;
      }
    if (shift <= shift_tol) break;
  }
  return res;
}

inline constexpr std::size_t kNoise = std::numeric_limits<std::size_t>::max();

/// DBSCAN with Euclidean distance; `min_pts` counts the point itself.
/// Labels are cluster indices in discovery order, kNoise for noise.
inline std::vector<std::size_t> dbscan(const PointSet& pts, double eps, std::size_t min_pts) {
  const std::size_t n = pts.size();
  const double eps2 = eps * eps;
  auto neighbors = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j)
      if (squared_distance(pts.row(i), pts.row(j)) <= eps2) out.push_back(j);
    return out;
  };
  constexpr std::size_t kUnvisited = kNoise - 1;
  std::vector<std::size_t> labels(n, kUnvisited);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    auto seeds = neighbors(i);
    if (seeds.size() < min_pts) {
      labels[i] = kNoise;
      continue;
    }
    const std::size_t cid = next++;
    labels[i] = cid;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const std::size_t j = seeds[s];
      if (labels[j] == kNoise) labels[j] = cid;  // border point
      if (labels[j] != kUnvisited) continue;
      labels[j] = cid;
      auto more = neighbors(j);
      if (more.size() >= min_pts) seeds.insert(seeds.end(), more.begin(), more.end());
    }
  }
  return labels;
}

inline PointSet points_from(const EmbeddingStore& store) {
  return PointSet{store.dim(), std::vector<double>(store.values().begin(), store.values().end())};
}

inline PointSet points_from(const Projection& p) {
  PointSet s{2, {}};
  s.values.reserve(p.coords.size() * 2);
  for (const auto& c : p.coords) {
    s.values.push_back(c[0]);
    s.values.push_back(c[1]);
  }
  return s;
}

/// Clusters the dataset into subgroups. k-means yields exactly k subgroups
/// partitioning the samples; DBSCAN noise points are collected into an
/// "unclustered" subgroup.
inline std::vector<Subgroup> cluster(const Dataset& ds, const ClusteringConfig& config,
                                     const Projection* projection = nullptr) {
  config.check(ds.size());
  PointSet pts;
  if (config.space == ClusterSpace::Projected2d) {
    if (!projection) throw InvalidArgument("projected_2d clustering requires a projection");
    if (projection->coords.size() != ds.size()) throw InvalidArgument("projection row count != sample count");
    pts = points_from(*projection);
  } else {
    pts = points_from(ds.store());
  }

  json base = to_json(config);
  if (projection && config.space == ClusterSpace::Projected2d) base["projection"] = projection->params;
  const std::string tag = stable_hash(base.dump()).substr(0, 8);

  std::vector<std::size_t> labels;
  std::size_t groups = 0;
  if (config.method == ClusterMethod::KMeans) {
    auto res = kmeans(pts, config.k, config.seed, config.kmeans_max_iters, config.kmeans_tol);
    labels = std::move(res.labels);
    groups = config.k;
  } else {
    labels = dbscan(pts, config.dbscan_eps, config.dbscan_min_pts);
    for (auto l : labels)
      if (l != kNoise) groups = std::max(groups, l + 1);
  }

  std::vector<Subgroup> out(groups);
  Subgroup noise;
  for (std::size_t c = 0; c < groups; ++c) {
    out[c].kind = SubgroupKind::Cluster;
    out[c].id = "cluster-" + tag + "-" + std::to_string(c);
    out[c].provenance = json{{"config", base}, {"cluster_index", c}};
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kNoise) noise.members.push_back(ds.record(i).id);
    else out[labels[i]].members.push_back(ds.record(i).id);
  }
  if (!noise.members.empty()) {
    noise.kind = SubgroupKind::Cluster;
    noise.id = "cluster-" + tag + "-unclustered";
    noise.provenance = json{{"config", base}, {"cluster_index", nullptr}, {"unclustered", true}};
    out.push_back(std::move(noise));
  }
  return out;
}

}  // namespace vibe
