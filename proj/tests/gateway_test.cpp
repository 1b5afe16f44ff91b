#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "vibe/gateway.hpp"

namespace vibe {
namespace {

/// Fails the first `failures` calls with the given transport error.
class FlakyProvider final : public Provider {
 public:
  FlakyProvider(int failures, bool retryable) : failures_(failures), retryable_(retryable) {}
  std::vector<double> embed(const std::string&) override {
    fail();
    return {1.0, 0.0};
  }
  std::string caption(const std::string&, const std::string&) override {
    fail();
    return "cap";
  }
  std::string complete(const std::string&) override {
    fail();
    return "ok";
  }
  int calls() const { return calls_; }

 private:
  void fail() {
    if (calls_++ < failures_) throw TransportError("boom", retryable_);
  }
  int failures_;
  bool retryable_;
  int calls_ = 0;
};

class FixedProvider final : public Provider {
 public:
  explicit FixedProvider(std::vector<double> v) : v_(std::move(v)) {}
  std::vector<double> embed(const std::string&) override { return v_; }
  std::string caption(const std::string&, const std::string&) override { return ""; }
  std::string complete(const std::string&) override { return ""; }

 private:
  std::vector<double> v_;
};

/// Tracks the maximum number of concurrent calls.
class SlowProvider final : public Provider {
 public:
  std::vector<double> embed(const std::string&) override {
    const int now = ++active_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --active_;
    return {1.0};
  }
  std::string caption(const std::string&, const std::string&) override { return "c"; }
  std::string complete(const std::string&) override { return "c"; }
  int peak() const { return peak_.load(); }

 private:
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

TEST(StubProvider, DeterministicUnitVectors) {
  auto gw = Gateway::stub(16);
  const auto a = gw->embed_text("a red car");
  const auto b = gw->embed_text("a red car");
  EXPECT_EQ(a, b);
  double n = 0;
  for (double x : a) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_NE(gw->embed_text("a blue car"), a);
  EXPECT_EQ(Gateway::stub(16)->embed_text("a red car"), a);
}

TEST(StubProvider, CaptionSummaryAndIssueContracts) {
  ProviderConfig cfg;
  cfg.stub.issues = {"one", "two"};
  auto gw = Gateway::stub(4, cfg);
  EXPECT_EQ(gw->caption_image("img/a.png", ""), "CAPTION(" + stable_hash("img/a.png") + ")");
  EXPECT_EQ(gw->complete("hello"), "SUMMARY(" + stable_hash("hello") + ")");
  EXPECT_EQ(gw->complete("x Come up with 10 distinct concepts y"), "one\ntwo");
  EXPECT_EQ(StubSettings{}.issues.size(), 10u);
}

TEST(StubProvider, BatchCaptionsAreOrderAligned) {
  auto gw = Gateway::stub(4);
  const std::vector<std::string> assets{"b.png", "a.png", "c.png"};
  std::vector<std::string> caps;
  for (const auto& a : assets) caps.push_back(gw->caption_image(a, ""));
  ASSERT_EQ(caps.size(), 3u);
  for (std::size_t i = 0; i < assets.size(); ++i) EXPECT_EQ(caps[i], "CAPTION(" + stable_hash(assets[i]) + ")");
}

TEST(StubProvider, PinsOverrideHashing) {
  ProviderConfig cfg;
  cfg.stub.pins["red"] = {0.0, 2.0, 0.0};
  auto gw = Gateway::stub(3, cfg);
  EXPECT_EQ(gw->embed_text("red"), (std::vector<double>{0.0, 2.0, 0.0}));
}

TEST(Gateway, RetriesWithExponentialBackoff) {
  ProviderConfig cfg;
  cfg.retry.attempts = 4;
  cfg.retry.backoff_ms = 100;
  auto provider = std::make_unique<FlakyProvider>(3, true);
  auto* raw = provider.get();
  Gateway gw(cfg, std::move(provider), 2);
  std::vector<long long> waits;
  gw.set_sleeper([&](std::chrono::milliseconds d) { waits.push_back(d.count()); });
  EXPECT_EQ(gw.complete("x"), "ok");
  EXPECT_EQ(raw->calls(), 4);
  EXPECT_EQ(waits, (std::vector<long long>{100, 200, 400}));
  const auto log = gw.request_log();
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].attempts, 4);
  EXPECT_TRUE(log[0].ok);
}

TEST(Gateway, GivesUpAfterAttemptsAndOnFatalErrors) {
  ProviderConfig cfg;
  cfg.retry.attempts = 2;
  Gateway gw(cfg, std::make_unique<FlakyProvider>(5, true), 2);
  gw.set_sleeper([](std::chrono::milliseconds) {});
  try {
    gw.embed_text("x");
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_EQ(e.operation(), "embed");
  }
  EXPECT_FALSE(gw.request_log().back().ok);

  auto fatal = std::make_unique<FlakyProvider>(1, false);
  auto* raw = fatal.get();
  Gateway gw2(cfg, std::move(fatal), 2);
  EXPECT_THROW(gw2.embed_text("x"), GatewayError);
  EXPECT_EQ(raw->calls(), 1);
}

TEST(Gateway, OverBudgetPromptFailsBeforeAnyCall) {
  ProviderConfig cfg;
  cfg.max_prompt_chars = 10;
  auto provider = std::make_unique<FlakyProvider>(0, true);
  auto* raw = provider.get();
  Gateway gw(cfg, std::move(provider), 2);
  EXPECT_THROW(gw.complete(std::string(11, 'x')), BudgetError);
  EXPECT_EQ(raw->calls(), 0);
  EXPECT_TRUE(gw.request_log().empty());
  EXPECT_EQ(gw.complete(std::string(10, 'x')), "ok");
}

TEST(Gateway, RejectsBadEmbeddings) {
  EXPECT_THROW(Gateway(ProviderConfig{}, std::make_unique<FixedProvider>(std::vector<double>{1, 2}), 3).embed_text("x"),
               GatewayError);
  EXPECT_THROW(Gateway(ProviderConfig{}, std::make_unique<FixedProvider>(std::vector<double>{0, 0}), 2).embed_text("x"),
               GatewayError);
  EXPECT_THROW(Gateway(ProviderConfig{}, std::make_unique<FixedProvider>(std::vector<double>{NAN, 1}), 2).embed_text("x"),
               GatewayError);
  EXPECT_THROW(Gateway::stub(2)->embed_text(""), InvalidArgument);
  EXPECT_THROW(Gateway(ProviderConfig{}, std::make_unique<FixedProvider>(std::vector<double>{1, 0}), 2)
                   .caption_image("a.png", ""),
               GatewayError);
}

TEST(Gateway, RequestLogMarksImageBytes) {
  ProviderConfig cfg;
  cfg.caption_endpoint = "http://captioner/v1/caption";
  cfg.chat_endpoint = "http://chat/v1/complete";
  auto gw = Gateway::stub(2, cfg);
  gw->caption_image("a.png", "\x89PNG");
  gw->complete("summarize");
  const auto log = gw->request_log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_TRUE(log[0].carries_image_bytes);
  EXPECT_EQ(log[0].endpoint, cfg.caption_endpoint);
  EXPECT_FALSE(log[1].carries_image_bytes);
  EXPECT_EQ(log[1].endpoint, cfg.chat_endpoint);
  EXPECT_EQ(gw->call_count("caption"), 1u);
}

TEST(Gateway, ConcurrencyIsBounded) {
  ProviderConfig cfg;
  cfg.max_concurrency = 2;
  auto provider = std::make_unique<SlowProvider>();
  auto* raw = provider.get();
  Gateway gw(cfg, std::move(provider), 1);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { gw.embed_text("x"); });
  for (auto& t : threads) t.join();
  EXPECT_LE(raw->peak(), 2);
  EXPECT_EQ(gw.call_count("embed"), 8u);
}

TEST(ProviderConfig, PrivacyModeRules) {
  ProviderConfig cfg;
  cfg.privacy_mode = true;
  EXPECT_NO_THROW(cfg.check());
  cfg.chat_endpoint = "https://remote/chat";
  cfg.caption_endpoint = cfg.chat_endpoint;
  EXPECT_THROW(cfg.check(), ConfigError);
  EXPECT_THROW(Gateway::stub(2, cfg), ConfigError);
  cfg.caption_endpoint = "http://localhost:9000/caption";
  EXPECT_NO_THROW(cfg.check());
  cfg.provider = "http";
  cfg.caption_endpoint.clear();
  EXPECT_THROW(cfg.check(), ConfigError);
}

TEST(ProviderConfig, InvalidValuesAndJsonRoundTrip) {
  ProviderConfig cfg;
  cfg.max_concurrency = 0;
  EXPECT_THROW(cfg.check(), ConfigError);
  cfg = ProviderConfig{};
  cfg.provider = "carrier-pigeon";
  EXPECT_THROW(cfg.check(), ConfigError);

  cfg = ProviderConfig{};
  cfg.chat_model = "m";
  cfg.retry.attempts = 5;
  cfg.stub.pins["x"] = {1.0, 2.0};
  EXPECT_EQ(to_json(provider_config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(GatewayIdentity, ChangesWithModelsNotConcurrency) {
  ProviderConfig a;
  ProviderConfig b = a;
  b.max_concurrency = 16;
  EXPECT_EQ(identity_of(a), identity_of(b));
  b.embed_model = "other";
  EXPECT_NE(identity_of(a), identity_of(b));
  EXPECT_EQ(to_json(identity_of(a))["provider"], "stub");
}

}  // namespace
}  // namespace vibe
