#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/SVD>

#include "support/fixtures.hpp"
#include "vibe/projection.hpp"

namespace vibe {
namespace {

TEST(ProjectPca, RankOneDataKeepsOrderOnFirstComponent) {
  std::vector<std::vector<double>> rows;
  for (double x : {3.0, -1.0, 7.5, 0.0, 2.0, -4.0}) rows.push_back({x, 0.0, 0.0});
  const auto p = project_pca(EmbeddingStore::from_rows(rows));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(p.coords[i][1], 0.0, 1e-9);
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (rows[i][0] < rows[j][0]) EXPECT_LT(p.coords[i][0], p.coords[j][0]);
  }
  EXPECT_NEAR(p.explained_variance_ratio[0], 1.0, 1e-12);
}

TEST(ProjectPca, ComponentsAreOrthonormal) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto p = project_pca(EmbeddingStore::from_rows(testing::random_rows(60, 10, seed)));
    const auto& c = p.components;
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
      return s;
    };
    EXPECT_NEAR(dot(c[0], c[0]), 1.0, 1e-9);
    EXPECT_NEAR(dot(c[1], c[1]), 1.0, 1e-9);
    EXPECT_NEAR(dot(c[0], c[1]), 0.0, 1e-9);
  }
}

TEST(ProjectPca, CapturedVarianceMatchesSvdOracle) {
  // Anisotropic data so the top two components are well separated.
  auto rows = testing::random_rows(200, 12, 17);
  for (auto& r : rows)
    for (std::size_t d = 0; d < r.size(); ++d) r[d] *= 1.0 + 0.5 * static_cast<double>(12 - d);
  const auto store = EmbeddingStore::from_rows(rows);
  const auto p = project_pca(store);

  Eigen::MatrixXd x(200, 12);
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 12; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  x.rowwise() -= x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto s2 = svd.singularValues().array().square();
  const double share = (s2(0) + s2(1)) / s2.sum();
  EXPECT_NEAR(p.explained_variance_ratio[0] + p.explained_variance_ratio[1], share, 1e-6);

  // Coordinates are the centered data projected on the (sign-fixed) components.
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd v = svd.matrixV().col(c);
    const Eigen::VectorXd proj = x * v;
    for (int i = 0; i < 200; ++i)
      EXPECT_NEAR(std::abs(p.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]), std::abs(proj(i)), 1e-6);
  }
}

TEST(ProjectPca, Deterministic) {
  const auto store = EmbeddingStore::from_rows(testing::random_rows(50, 8, 4));
  const auto a = project_pca(store);
  const auto b = project_pca(store);
  EXPECT_EQ(a.coords, b.coords);
}

TEST(ProjectPca, RejectsDegenerateData) {
  std::vector<std::vector<double>> same(5, std::vector<double>{1.0, 2.0, 3.0});
  EXPECT_THROW(project_pca(EmbeddingStore::from_rows(same)), InvalidArgument);
  EXPECT_THROW(project_pca(EmbeddingStore::from_rows({{1.0, 0.0}, {0.0, 1.0}})), InvalidArgument);
}

TEST(ProjectNeighborEmbedding, ShapeAndDeterminism) {
  const auto ds = testing::make_dataset(testing::random_rows(40, 6, 9));
  ProjectionParams params;
  params.iterations = 150;
  const auto a = project(ds, ProjectionMethod::NeighborEmbedding, params);
  const auto b = project(ds, ProjectionMethod::NeighborEmbedding, params);
  ASSERT_EQ(a.coords.size(), ds.size());
  for (const auto& c : a.coords) {
    EXPECT_TRUE(std::isfinite(c[0]));
    EXPECT_TRUE(std::isfinite(c[1]));
  }
  EXPECT_EQ(a.coords, b.coords);
  params.seed = 43;
  EXPECT_NE(project(ds, ProjectionMethod::NeighborEmbedding, params).coords, a.coords);
}

TEST(ProjectNeighborEmbedding, RefusesLargeInputs) {
  const auto ds = testing::make_dataset(testing::random_rows(12, 3, 9));
  ProjectionParams params;
  params.max_points = 10;
  EXPECT_THROW(project(ds, ProjectionMethod::NeighborEmbedding, params), InvalidArgument);
}

}  // namespace
}  // namespace vibe
