#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/fixtures.hpp"
#include "vibe/analysis.hpp"

namespace vibe {
namespace {

Subgroup group(std::string id, std::vector<std::string> members) {
  Subgroup s;
  s.id = std::move(id);
  s.kind = SubgroupKind::Cluster;
  s.members = std::move(members);
  return s;
}

std::vector<std::string> ids_range(std::size_t from, std::size_t to) {
  std::vector<std::string> out;
  for (std::size_t i = from; i < to; ++i) out.push_back(testing::sample_id(i));
  return out;
}

TEST(RankSubgroups, WorstFirstPerDirection) {
  auto ds = testing::make_dataset({{1, 0}, {0, 1}, {1, 1}, {2, 1}},
                                  {{testing::lower_better("loss"), {0.9, 0.9, 0.1, 0.1}},
                                   {testing::higher_better("iou"), {0.9, 0.9, 0.1, 0.1}}});
  const std::vector<Subgroup> groups{group("a", {"s0000", "s0001"}), group("b", {"s0002", "s0003"})};
  const auto by_loss = rank_subgroups(groups, ds, "loss");
  EXPECT_EQ(by_loss[0].id, "a");
  EXPECT_DOUBLE_EQ(by_loss[0].mean, 0.9);
  const auto by_iou = rank_subgroups(groups, ds, "iou");
  EXPECT_EQ(by_iou[0].id, "b");
  EXPECT_THROW(rank_subgroups(groups, ds, "nope"), NotFoundError);
}

TEST(RankSubgroups, TiesBySizeThenId) {
  auto ds = testing::make_dataset({{1, 0}, {0, 1}, {1, 1}, {2, 1}, {3, 1}},
                                  {{testing::lower_better("loss"), {0.5, 0.5, 0.5, 0.5, 0.5}}});
  const std::vector<Subgroup> groups{group("z", {"s0000"}), group("y", {"s0001", "s0002"}), group("x", {"s0003"})};
  const auto r = rank_subgroups(groups, ds, "loss");
  EXPECT_EQ(r[0].id, "y");
  EXPECT_EQ(r[1].id, "x");
  EXPECT_EQ(r[2].id, "z");
}

TEST(RankSubgroups, MatchesSortByMeanOracle) {
  Rng rng(12);
  const std::size_t n = 300;
  std::vector<double> loss(n);
  for (auto& v : loss) v = rng.uniform();
  auto ds = testing::make_dataset(testing::random_rows(n, 3, 1), {{testing::lower_better("loss"), loss}});
  std::vector<Subgroup> groups;
  for (int g = 0; g < 20; ++g) {
    std::vector<std::string> m;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.1) m.push_back(testing::sample_id(i));
    if (m.empty()) m.push_back(testing::sample_id(static_cast<std::size_t>(g)));
    groups.push_back(group("g" + std::to_string(g), m));
  }
  std::vector<std::pair<double, std::string>> oracle;
  for (const auto& g : groups) {
    double s = 0;
    for (const auto& id : g.members) s += loss[std::stoul(id.substr(1))];
    oracle.emplace_back(s / static_cast<double>(g.members.size()), g.id);
  }
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto ranked = rank_subgroups(groups, ds, "loss");
  for (std::size_t i = 0; i < groups.size(); ++i) EXPECT_EQ(ranked[i].id, oracle[i].second);
}

TEST(RankSubgroups, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  std::vector<double> loss(60), transformed(60);
  for (std::size_t i = 0; i < 60; ++i) {
    loss[i] = rng.uniform();
    transformed[i] = std::exp(3.0 * loss[i]);  // strictly increasing, same direction
  }
  const auto rows = testing::random_rows(60, 2, 3);
  auto a = testing::make_dataset(rows, {{testing::lower_better("m"), loss}});
  auto b = testing::make_dataset(rows, {{testing::lower_better("m"), transformed}});
  // Singleton subgroups: mean ordering equals value ordering under any monotone map.
  std::vector<Subgroup> groups;
  for (std::size_t i = 0; i < 60; ++i) groups.push_back(group("g" + std::to_string(i), {testing::sample_id(i)}));
  const auto ra = rank_subgroups(groups, a, "m");
  const auto rb = rank_subgroups(groups, b, "m");
  for (std::size_t i = 0; i < groups.size(); ++i) EXPECT_EQ(ra[i].id, rb[i].id);
}

TEST(Centroid, PlainMeanAndIdentity) {
  auto ds = testing::make_dataset({{1, 0}, {0, 1}, {2, 3}});
  EXPECT_EQ(centroid(group("g", {"s0000", "s0001"}), ds), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(centroid(group("g", {"s0002"}), ds), (std::vector<double>{2, 3}));
  EXPECT_THROW(centroid(group("g", {}), ds), InvalidArgument);
}

TEST(Centroid, TrimDropsAntipodalOutlier) {
  Rng rng(8);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 9; ++i) rows.push_back({1.0 + 0.01 * rng.normal(), 2.0 + 0.01 * rng.normal(), 0.5});
  rows.push_back({-1.0, -2.0, -0.5});
  auto ds = testing::make_dataset(rows);
  const auto g = group("g", ids_range(0, 10));
  std::vector<double> nine(3, 0.0);
  for (int i = 0; i < 9; ++i)
    for (int d = 0; d < 3; ++d) nine[static_cast<std::size_t>(d)] += rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] / 9.0;
  const auto c = centroid(g, ds, 0.1);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(c[static_cast<std::size_t>(d)], nine[static_cast<std::size_t>(d)], 1e-9);
  EXPECT_THROW(centroid(g, ds, 1.0), InvalidArgument);
}

TEST(Representatives, SingletonAndPrefixProperty) {
  const auto ds = testing::make_dataset(testing::random_rows(30, 5, 6));
  EXPECT_EQ(representatives(group("g", {"s0004"}), ds, 3), std::vector<std::string>{"s0004"});
  const auto g = group("g", ids_range(0, 30));
  auto prev = representatives(g, ds, 1);
  for (std::size_t n = 2; n <= 30; ++n) {
    const auto cur = representatives(g, ds, n);
    ASSERT_EQ(cur.size(), n);
    EXPECT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
    prev = cur;
  }
  for (const auto& id : prev) EXPECT_NE(std::find(g.members.begin(), g.members.end(), id), g.members.end());
}

TEST(Representatives, BlobRepresentativeIsNearestToMeanByFullScan) {
  const auto blobs = testing::two_blobs(100, 6, 10.0, 13);
  const auto ds = testing::make_dataset(blobs.rows);
  std::vector<std::string> members;
  for (std::size_t i = 0; i < blobs.rows.size(); ++i)
    if (blobs.labels[i] == 1) members.push_back(testing::sample_id(i));
  // Oracle: mean of the blob, then cosine to every member.
  std::vector<double> mean(6, 0.0);
  for (const auto& id : members)
    for (std::size_t d = 0; d < 6; ++d) mean[d] += blobs.rows[std::stoul(id.substr(1))][d] / static_cast<double>(members.size());
  std::string best;
  double best_sim = -2;
  for (const auto& id : members) {
    const auto& r = blobs.rows[std::stoul(id.substr(1))];
    double dot = 0, nr = 0, nm = 0;
    for (std::size_t d = 0; d < 6; ++d) {
      dot += r[d] * mean[d];
      nr += r[d] * r[d];
      nm += mean[d] * mean[d];
    }
    const double s = dot / std::sqrt(nr * nm);
    if (s > best_sim) {
      best_sim = s;
      best = id;
    }
  }
  EXPECT_EQ(representatives(group("b", members), ds, 1).front(), best);
}

TEST(Extremes, WorstAndBestUnderDirection) {
  auto ds = testing::make_dataset({{1, 0}, {0, 1}, {1, 1}}, {{testing::lower_better("loss"), {0.1, 0.2, 0.9}},
                                                             {testing::higher_better("iou"), {0.1, 0.2, 0.9}}});
  const auto g = group("g", {"s0000", "s0001", "s0002"});
  auto e = extremes(g, ds, "loss", 1);
  EXPECT_EQ(e.worst, std::vector<std::string>{"s0002"});
  EXPECT_EQ(e.best, std::vector<std::string>{"s0000"});
  e = extremes(g, ds, "iou", 1);
  EXPECT_EQ(e.worst, std::vector<std::string>{"s0000"});
  e = extremes(g, ds, "loss", 5);
  EXPECT_EQ(e.worst.size(), 3u);
  EXPECT_EQ(e.best, std::vector<std::string>(e.worst.rbegin(), e.worst.rend()));
  EXPECT_THROW(extremes(g, ds, "nope", 1), NotFoundError);
}

TEST(Extremes, MatchesSortOracleAndDisjoint) {
  Rng rng(44);
  std::vector<double> loss(150);
  for (auto& v : loss) v = std::round(rng.uniform() * 50.0) / 50.0;  // ties on purpose
  auto ds = testing::make_dataset(testing::random_rows(150, 2, 4), {{testing::lower_better("loss"), loss}});
  std::vector<std::string> members;
  for (std::size_t i = 0; i < 150; ++i)
    if (members.size() < 100 && rng.uniform() < 0.8) members.push_back(testing::sample_id(i));
  const auto g = group("g", members);
  std::vector<std::pair<double, std::string>> sorted;
  for (const auto& id : members) sorted.emplace_back(loss[std::stoul(id.substr(1))], id);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  const auto e = extremes(g, ds, "loss", 10);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(e.worst[i], sorted[i].second);
    EXPECT_EQ(e.best[i], sorted[sorted.size() - 1 - i].second);
  }
  for (const auto& w : e.worst) EXPECT_EQ(std::count(e.best.begin(), e.best.end(), w), 0);
}

TEST(NeighborClusters, DuplicateRanksFirstAndTargetExcluded) {
  const auto ds = testing::make_dataset(testing::random_rows(40, 6, 31));
  const auto target = group("t", ids_range(0, 10));
  std::vector<Subgroup> all{target, group("dup", ids_range(0, 10)), group("a", ids_range(10, 20)),
                            group("b", ids_range(20, 30))};
  const auto n = neighbor_clusters(target, all, ds, 2);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].subgroup_id, "dup");
  EXPECT_NEAR(n[0].centroid_similarity, 1.0, 1e-12);
  const auto everything = neighbor_clusters(target, all, ds, 10);
  EXPECT_EQ(everything.size(), 3u);
  for (const auto& x : everything) EXPECT_NE(x.subgroup_id, "t");
}

TEST(NeighborClusters, MatchesAllPairsOracle) {
  const auto ds = testing::make_dataset(testing::random_rows(100, 5, 3));
  std::vector<Subgroup> clusters;
  for (std::size_t c = 0; c < 10; ++c) clusters.push_back(group("c" + std::to_string(c), ids_range(c * 10, c * 10 + 10)));
  auto mean_of = [&](const Subgroup& g) {
    std::vector<double> m(5, 0.0);
    for (const auto& id : g.members)
      for (std::size_t d = 0; d < 5; ++d) m[d] += ds.store().row(ds.index_of(id))[d] / 10.0;
    return m;
  };
  const auto t = mean_of(clusters[3]);
  std::vector<std::pair<double, std::string>> oracle;
  for (const auto& c : clusters) {
    if (c.id == "c3") continue;
    const auto m = mean_of(c);
    double dot = 0, a = 0, b = 0;
    for (std::size_t d = 0; d < 5; ++d) {
      dot += t[d] * m[d];
      a += t[d] * t[d];
      b += m[d] * m[d];
    }
    oracle.emplace_back(dot / std::sqrt(a * b), c.id);
  }
  std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  const auto got = neighbor_clusters(clusters[3], clusters, ds, 9);
  ASSERT_EQ(got.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(got[i].subgroup_id, oracle[i].second);
    EXPECT_NEAR(got[i].centroid_similarity, oracle[i].first, 1e-12);
  }
}

}  // namespace
}  // namespace vibe
