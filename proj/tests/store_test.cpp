#include <gtest/gtest.h>

#include <thread>

#include "support/fixtures.hpp"
#include "vibe/service/store.hpp"

namespace vibe::service {
namespace {

using testing::TempDir;

PersistedSubgroup make_doc(const std::string& id, std::vector<std::string> members) {
  PersistedSubgroup p;
  p.subgroup.id = id;
  p.subgroup.kind = SubgroupKind::Cluster;
  p.subgroup.members = std::move(members);
  p.subgroup.provenance = {{"k", 2}};
  p.created_at = "2026-01-01T00:00:00.000Z";
  return p;
}

std::string slurp(const fs::path& p) { return detail::read_file(p); }

TEST(WriteAtomically, ReplacesWholeFileAndLeavesNoTemp) {
  TempDir tmp;
  const auto f = tmp.path() / "sub" / "doc.json";
  write_atomically(f, "first version, longer");
  write_atomically(f, "second");
  EXPECT_EQ(slurp(f), "second");
  EXPECT_FALSE(fs::exists(f.string() + ".tmp"));
}

TEST(DocumentStore, RoundTripIsByteIdentical) {
  TempDir tmp;
  const auto f = tmp.path() / "store.json";
  {
    DocumentStore s(f);
    auto a = make_doc("a", {"s1", "s2"});
    a.subgroup.cache.summary_text = "dark scenes";
    a.subgroup.cache.representative_ids = std::vector<std::string>{"s1"};
    a.subgroup.cache.issues = std::vector<CandidateIssue>{{"fog", 0.75, false, {{"split", "median"}}}};
    s.put(a);
    s.put(make_doc("b", {"s3"}));
    Settings st;
    st.metric = "loss";
    st.metric_range = std::pair{0.0, 2.0};
    s.set_settings(st);
    s.set_session_field("cluster_ids", json::array({"a", "b"}));
  }
  const std::string first = slurp(f);
  DocumentStore reopened(f);
  ASSERT_TRUE(reopened.get("a"));
  EXPECT_EQ(reopened.get("a")->subgroup.cache.summary_text, "dark scenes");
  EXPECT_EQ(reopened.get("a")->subgroup.cache.issues->front().text, "fog");
  EXPECT_EQ(reopened.settings().metric, "loss");
  EXPECT_EQ(reopened.session()["cluster_ids"], json::array({"a", "b"}));
  EXPECT_EQ(reopened.ids(), (std::vector<std::string>{"a", "b"}));

  reopened.set_session_field("cluster_ids", json::array({"a", "b"}));
  EXPECT_EQ(slurp(f), first);
}

TEST(DocumentStore, InsertIfAbsentKeepsExistingCache) {
  TempDir tmp;
  DocumentStore s(tmp.path() / "store.json");
  auto cached = make_doc("a", {"s1"});
  cached.subgroup.cache.summary_text = "kept";
  s.put(cached);
  const auto got = s.insert_if_absent(make_doc("a", {"s1"}));
  EXPECT_EQ(got.subgroup.cache.summary_text, "kept");
  s.insert_all_if_absent({make_doc("a", {"s1"}), make_doc("c", {"s9"})});
  EXPECT_EQ(s.get("a")->subgroup.cache.summary_text, "kept");
  EXPECT_TRUE(s.contains("c"));
  EXPECT_FALSE(s.get("zzz"));
}

TEST(DocumentStore, CorruptFileIsReported) {
  TempDir tmp;
  testing::write_text(tmp.path() / "store.json", "{\"subgroups\": ");
  EXPECT_THROW(DocumentStore(tmp.path() / "store.json"), DataError);
}

TEST(DocumentStore, ConcurrentWritersAllLand) {
  TempDir tmp;
  const auto f = tmp.path() / "store.json";
  {
    DocumentStore s(f);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
      threads.emplace_back([&s, t] {
        for (int i = 0; i < 10; ++i) s.put(make_doc("g" + std::to_string(t) + "-" + std::to_string(i), {"s"}));
      });
    for (auto& t : threads) t.join();
  }
  EXPECT_EQ(DocumentStore(f).ids().size(), 40u);
}

TEST(Settings, PartialUpdateKeepsOtherFields) {
  Settings base;
  base.metric = "loss";
  base.similarity_threshold = 0.3;
  const auto s = settings_from_json({{"invert_colors", true}}, base);
  EXPECT_EQ(s.metric, "loss");
  EXPECT_EQ(s.similarity_threshold, 0.3);
  EXPECT_TRUE(s.invert_colors);
  const auto cleared = settings_from_json({{"metric", nullptr}, {"similarity_threshold", nullptr}}, s);
  EXPECT_FALSE(cleared.metric);
  EXPECT_FALSE(cleared.similarity_threshold);
}

TEST(Settings, RoundTripsThroughJson) {
  Settings s;
  s.metric = "accuracy";
  s.invert_colors = true;
  s.metric_range = std::pair{-1.0, 1.0};
  s.similarity_threshold = -0.25;
  EXPECT_EQ(settings_from_json(to_json(s)), s);
}

TEST(Settings, InvalidValuesAreRejected) {
  EXPECT_THROW(settings_from_json({{"colour", 1}}), InvalidArgument);
  EXPECT_THROW(settings_from_json({{"metric_range", {2.0, 1.0}}}), InvalidArgument);
  EXPECT_THROW(settings_from_json({{"metric_range", {1.0}}}), InvalidArgument);
  EXPECT_THROW(settings_from_json({{"similarity_threshold", 1.5}}), InvalidArgument);
  EXPECT_THROW(settings_from_json(json::array()), InvalidArgument);
}

TEST(HistoryLog, AppendThenReplay) {
  TempDir tmp;
  const auto f = tmp.path() / "history.jsonl";
  {
    HistoryLog log(f);
    EXPECT_EQ(log.append("a", "t0").seq, 0u);
    EXPECT_EQ(log.append("b", "t1").seq, 1u);
    EXPECT_EQ(log.append("a", "t2").seq, 2u);
  }
  HistoryLog reopened(f);
  const std::vector<HistoryEntry> want{{0, "a", "t0"}, {1, "b", "t1"}, {2, "a", "t2"}};
  EXPECT_EQ(reopened.entries(), want);
  EXPECT_EQ(reopened.append("c", "t3").seq, 3u);
}

TEST(HistoryLog, TornFinalLineIsIgnored) {
  TempDir tmp;
  const auto f = tmp.path() / "history.jsonl";
  testing::write_text(f, "{\"seq\":0,\"subgroup_id\":\"a\",\"timestamp\":\"t0\"}\n{\"seq\":1,\"subg");
  const auto entries = HistoryLog::replay(f);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].subgroup_id, "a");
  EXPECT_TRUE(HistoryLog::replay(tmp.path() / "missing.jsonl").empty());
}

}  // namespace
}  // namespace vibe::service
