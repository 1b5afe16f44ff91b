#pragma once

// 2-D projections of the embedding space for visual inspection.
//
// PCA is the reference projector. The neighbor-embedding projector is an
// exact (O(N^2)) t-SNE intended for layouts of a few thousand points; its
// geometry is not part of any contract beyond shape and determinism.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vibe/common.hpp"
#include "vibe/dataset.hpp"

namespace vibe {

enum class ProjectionMethod { Pca, NeighborEmbedding };

inline std::string to_string(ProjectionMethod m) {
  return m == ProjectionMethod::Pca ? "pca" : "neighbor_embedding";
}

inline ProjectionMethod parse_projection_method(const std::string& s) {
  if (s == "pca") return ProjectionMethod::Pca;
  if (s == "neighbor_embedding" || s == "tsne") return ProjectionMethod::NeighborEmbedding;
  throw InvalidArgument("unknown projection method: " + s);
}

struct ProjectionParams {
  std::uint64_t seed = 42;
  double perplexity = 30.0;
  int iterations = 500;
  double learning_rate = 200.0;
  std::size_t max_points = 5000;
};

struct Projection {
  ProjectionMethod method = ProjectionMethod::Pca;
  std::vector<std::array<double, 2>> coords;
  json params = json::object();
  /// PCA only: unit principal directions (2 x dim) and their variance share.
  std::vector<std::vector<double>> components;
  std::array<double, 2> explained_variance_ratio{0.0, 0.0};
};

namespace detail {

inline Eigen::MatrixXd centered_matrix(const EmbeddingStore& store) {
  const auto n = static_cast<Eigen::Index>(store.size());
  const auto d = static_cast<Eigen::Index>(store.dim());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = store.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = row[static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  return x;
}

}  // namespace detail

/// Centered projection onto the top-2 principal components. Each
/// component's sign is fixed so its largest-magnitude entry is positive.
inline Projection project_pca(const EmbeddingStore& store) {
  if (store.size() < 3) throw InvalidArgument("project: need at least 3 samples");
  const Eigen::MatrixXd x = detail::centered_matrix(store);
  const auto n = x.rows();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  const double total = cov.trace();
  if (!(total > 0.0)) throw InvalidArgument("project: degenerate data (all points identical)");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("project: eigendecomposition failed");
  const auto d = cov.rows();

  Projection p;
  p.method = ProjectionMethod::Pca;
  p.params = json{{"method", "pca"}};
  Eigen::MatrixXd basis(d, 2);
  const Eigen::Index cols = std::min<Eigen::Index>(2, d);
  for (Eigen::Index c = 0; c < cols; ++c) {
    // Eigen orders eigenvalues ascending.
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
    p.explained_variance_ratio[static_cast<std::size_t>(c)] = std::max(0.0, solver.eigenvalues()(d - 1 - c)) / total;
    p.components.emplace_back(v.data(), v.data() + v.size());
  }
  if (cols < 2) {
    basis.col(1).setZero();
    p.components.emplace_back(static_cast<std::size_t>(d), 0.0);
  }
  const Eigen::MatrixXd coords = x * basis;
  p.coords.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) p.coords[static_cast<std::size_t>(i)] = {coords(i, 0), coords(i, 1)};
  return p;
}

/// Exact t-SNE with a seeded initialisation.
inline Projection project_neighbor_embedding(const EmbeddingStore& store, const ProjectionParams& params) {
  const std::size_t n = store.size();
  if (n < 3) throw InvalidArgument("project: need at least 3 samples");
  if (n > params.max_points)
    throw InvalidArgument("project: neighbor_embedding supports at most " + std::to_string(params.max_points) +
                          " samples; use pca");

  std::vector<double> dist2(n * n, 0.0);
  double max_d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      const auto a = store.row(i), b = store.row(j);
      for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      dist2[i * n + j] = dist2[j * n + i] = s;
      max_d2 = std::max(max_d2, s);
    }
  if (max_d2 == 0.0) throw InvalidArgument("project: degenerate data (all points identical)");

  // Conditional affinities by binary search on the Gaussian precision.
  const double perplexity = std::min(params.perplexity, (static_cast<double>(n) - 1.0) / 3.0);
  const double target_entropy = std::log(std::max(perplexity, 1.0));
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * dist2[i * n + j] / max_d2);
        p[i * n + j] = w;
        sum += w;
        weighted += w * dist2[i * n + j] / max_d2;
      }
      if (sum <= 0.0) sum = 1e-300;
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = p[j * n + i] = s;
    }

  Rng rng(params.seed);
  std::vector<std::array<double, 2>> y(n), gains(n, {1.0, 1.0}), update(n, {0.0, 0.0});
  for (auto& pt : y) pt = {rng.normal() * 1e-4, rng.normal() * 1e-4};

  std::vector<double> q(n * n, 0.0);
  const int exaggeration_iters = std::min(250, params.iterations / 2);
  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration = iter < exaggeration_iters ? 12.0 : 1.0;
    const double momentum = iter < exaggeration_iters ? 0.5 : 0.8;
    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double w = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = w;
        qsum += 2.0 * w;
      }
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 2> grad{0.0, 0.0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = q[i * n + j];
        const double coeff = 4.0 * (exaggeration * p[i * n + j] - w / qsum) * w;
        grad[0] += coeff * (y[i][0] - y[j][0]);
        grad[1] += coeff * (y[i][1] - y[j][1]);
      }
      for (int c = 0; c < 2; ++c) {
        const bool same_sign = (grad[c] > 0) == (update[i][c] > 0);
        gains[i][c] = std::max(0.01, same_sign ? gains[i][c] * 0.8 : gains[i][c] + 0.2);
        update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * grad[c];
      }
    }
    std::array<double, 2> mean{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      y[i][0] += update[i][0];
      y[i][1] += update[i][1];
      mean[0] += y[i][0];
      mean[1] += y[i][1];
    }
    for (auto& pt : y) {
      pt[0] -= mean[0] / static_cast<double>(n);
      pt[1] -= mean[1] / static_cast<double>(n);
    }
  }

  Projection out;
  out.method = ProjectionMethod::NeighborEmbedding;
  out.coords = std::move(y);
  out.params = json{{"method", "neighbor_embedding"},
                    {"seed", params.seed},
                    {"perplexity", perplexity},
                    {"iterations", params.iterations},
                    {"learning_rate", params.learning_rate}};
  return out;
}

inline Projection project(const Dataset& ds, ProjectionMethod method, const ProjectionParams& params = {}) {
  return method == ProjectionMethod::Pca ? project_pca(ds.store())
                                         : project_neighbor_embedding(ds.store(), params);
}

inline json to_json(const Projection& p) {
  json coords = json::array();
  for (const auto& c : p.coords) coords.push_back({c[0], c[1]});
  return json{{"method", to_string(p.method)},
              {"coords", coords},
              {"params", p.params},
              {"explained_variance_ratio", {p.explained_variance_ratio[0], p.explained_variance_ratio[1]}}};
}

}  // namespace vibe
