#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "support/fixtures.hpp"
#include "vibe/gateway_http.hpp"

namespace vibe {
namespace {

using testing::TempDir;
using testing::write_text;

/// Local provider double. Answers embed/caption/chat with canned JSON and can
/// fail the first N requests with a chosen status.
class MockProvider {
 public:
  MockProvider() {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&] { return json{{"embedding", {0.6, 0.8}}}.dump(); });
    });
    server_.Post("/caption", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&] { return json{{"caption", "a red car"}}.dump(); });
    });
    server_.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&] { return json{{"text", "reply"}}.dump(); });
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockProvider() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  void fail_next(int n, int status) {
    std::lock_guard lock(mutex_);
    failures_ = n;
    fail_status_ = status;
  }
  void set_raw_body(std::string body) {
    std::lock_guard lock(mutex_);
    raw_body_ = std::move(body);
  }

  int hits() const { return hits_; }
  json last_body() const {
    std::lock_guard lock(mutex_);
    return last_body_;
  }
  std::string last_auth() const {
    std::lock_guard lock(mutex_);
    return last_auth_;
  }

  ProviderConfig config() const {
    ProviderConfig c;
    c.provider = "http";
    c.embed_endpoint = url("/embed");
    c.caption_endpoint = url("/caption");
    c.chat_endpoint = url("/chat");
    c.embed_model = "e-1";
    c.caption_model = "c-1";
    c.chat_model = "m-1";
    c.timeout_ms = 2000;
    c.retry = {3, 0};
    return c;
  }

 private:
  template <typename F>
  void handle(const httplib::Request& req, httplib::Response& res, F ok) {
    ++hits_;
    std::lock_guard lock(mutex_);
    last_body_ = json::parse(req.body, nullptr, false);
    last_auth_ = req.get_header_value("Authorization");
    if (failures_ > 0) {
      --failures_;
      res.status = fail_status_;
      res.set_content("{\"error\":\"nope\"}", "application/json");
      return;
    }
    res.set_content(raw_body_.empty() ? ok() : raw_body_, "application/json");
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  mutable std::mutex mutex_;
  std::atomic<int> hits_{0};
  int failures_ = 0;
  int fail_status_ = 500;
  std::string raw_body_;
  json last_body_;
  std::string last_auth_;
};

TEST(SplitUrl, SeparatesOriginAndPath) {
  const auto u = split_url("https://api.example.com:8443/v2/embed");
  EXPECT_EQ(u.origin, "https://api.example.com:8443");
  EXPECT_EQ(u.path, "/v2/embed");
  EXPECT_EQ(split_url("http://host").path, "/");
  EXPECT_THROW(split_url("ftp://host/x"), ConfigError);
  EXPECT_THROW(split_url("host/x"), ConfigError);
}

TEST(HttpProvider, SendsDocumentedRequestBodies) {
  MockProvider mock;
  HttpProvider p(mock.config(), "secret");

  EXPECT_EQ(p.embed("red car"), (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(mock.last_body(), (json{{"model", "e-1"}, {"input", "red car"}}));
  EXPECT_EQ(mock.last_auth(), "Bearer secret");

  EXPECT_EQ(p.caption("img/a.png", "PNG"), "a red car");
  EXPECT_EQ(mock.last_body(), (json{{"model", "c-1"}, {"asset", "img/a.png"}, {"image_base64", "UE5H"}}));
  EXPECT_EQ(p.caption("img/a.png", ""), "a red car");
  EXPECT_TRUE(mock.last_body()["image_base64"].is_null());

  EXPECT_EQ(p.complete("hello"), "reply");
  EXPECT_EQ(mock.last_body(), (json{{"model", "m-1"}, {"prompt", "hello"}}));
}

TEST(HttpProvider, OmitsAuthorizationWithoutKey) {
  MockProvider mock;
  HttpProvider p(mock.config(), "");
  p.complete("x");
  EXPECT_EQ(mock.last_auth(), "");
}

TEST(HttpProvider, ServerErrorsAndRateLimitsAreRetryable) {
  for (int status : {429, 500, 503}) {
    MockProvider mock;
    mock.fail_next(1, status);
    HttpProvider p(mock.config(), "");
    try {
      p.complete("x");
      FAIL() << "expected TransportError for " << status;
    } catch (const TransportError& e) {
      EXPECT_TRUE(e.retryable()) << status;
    }
  }
}

TEST(HttpProvider, ClientErrorsAndBadBodiesAreFatal) {
  MockProvider mock;
  HttpProvider p(mock.config(), "");
  mock.fail_next(1, 400);
  try {
    p.complete("x");
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retryable());
  }
  mock.set_raw_body("not json");
  try {
    p.complete("x");
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retryable());
  }
  mock.set_raw_body("{\"embedding\": [1, \"a\"]}");
  EXPECT_THROW(p.embed("x"), TransportError);
  mock.set_raw_body("{\"other\": 1}");
  EXPECT_THROW(p.caption("a", ""), TransportError);
}

TEST(HttpProvider, UnreachableEndpointIsRetryable) {
  ProviderConfig c;
  c.provider = "http";
  c.chat_endpoint = "http://127.0.0.1:1/chat";
  c.timeout_ms = 500;
  HttpProvider p(c, "");
  try {
    p.complete("x");
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

TEST(HttpGateway, RetriesThroughTransientFailures) {
  MockProvider mock;
  auto cfg = mock.config();
  Gateway gw(cfg, std::make_unique<HttpProvider>(cfg, ""), 2);
  mock.fail_next(2, 503);
  EXPECT_EQ(gw.complete("x"), "reply");
  EXPECT_EQ(mock.hits(), 3);
  const auto log = gw.request_log();
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].attempts, 3);
  EXPECT_TRUE(log[0].ok);

  mock.fail_next(3, 503);
  EXPECT_THROW(gw.complete("x"), GatewayError);
  EXPECT_EQ(mock.hits(), 6);

  mock.fail_next(1, 400);
  EXPECT_THROW(gw.complete("x"), GatewayError);
  EXPECT_EQ(mock.hits(), 7);
}

TEST(HttpGateway, EmbeddingDimensionIsChecked) {
  MockProvider mock;
  auto cfg = mock.config();
  Gateway gw(cfg, std::make_unique<HttpProvider>(cfg, ""), 3);
  EXPECT_THROW(gw.embed_text("x"), GatewayError);
}

TEST(ProviderManifest, LoadsAndRejectsMalformedFiles) {
  TempDir tmp;
  write_text(tmp.path() / "ok.json",
             R"({"provider": "http", "chat_endpoint": "http://h/chat", "timeout_ms": 5, "retry": {"attempts": 2}})");
  const auto c = load_provider_config(tmp.path() / "ok.json");
  EXPECT_EQ(c.provider, "http");
  EXPECT_EQ(c.chat_endpoint, "http://h/chat");
  EXPECT_EQ(c.timeout_ms, 5);
  EXPECT_EQ(c.retry.attempts, 2);
  write_text(tmp.path() / "bad.json", "{");
  EXPECT_THROW(load_provider_config(tmp.path() / "bad.json"), ConfigError);
}

TEST(ProviderManifest, SamplePinsResolveToStoredEmbeddings) {
  const Dataset ds = testing::make_dataset({{1, 0}, {0, 2}});
  ProviderConfig c;
  const json manifest = {{"stub", {{"pins", {{"tall", {{"sample", "s0001"}}}, {"raw", {0.5, 0.5}}}}}}};
  resolve_sample_pins(c, manifest, ds);
  EXPECT_EQ(c.stub.pins.at("tall"), (std::vector<double>{0, 2}));
  EXPECT_EQ(c.stub.pins.count("raw"), 0u);

  const json missing = {{"stub", {{"pins", {{"x", {{"sample", "nope"}}}}}}}};
  EXPECT_THROW(resolve_sample_pins(c, missing, ds), NotFoundError);
}

TEST(MakeGateway, EmptyPathGivesStub) {
  const Dataset ds = testing::make_dataset({{1, 0}, {0, 1}});
  auto gw = make_gateway(fs::path(), ds);
  EXPECT_EQ(gw->config().provider, "stub");
  EXPECT_EQ(gw->dim(), 2u);
}

TEST(MakeGateway, ManifestPinsReachTheStub) {
  TempDir tmp;
  const Dataset ds = testing::make_dataset({{1, 0}, {0, 1}});
  write_text(tmp.path() / "p.json", R"({"provider": "stub", "stub": {"pins": {"up": {"sample": "s0001"}}}})");
  auto gw = make_gateway(tmp.path() / "p.json", ds);
  EXPECT_EQ(gw->embed_text("up"), (std::vector<double>{0, 1}));
  write_text(tmp.path() / "broken.json", "[1,");
  EXPECT_THROW(make_gateway(tmp.path() / "broken.json", ds), ConfigError);
}

TEST(MakeGateway, HttpProviderReadsKeyFromEnvironment) {
  MockProvider mock;
  ::setenv(kApiKeyEnv, "from-env", 1);
  auto gw = make_gateway(mock.config(), 2);
  ::unsetenv(kApiKeyEnv);
  EXPECT_EQ(gw->embed_text("x"), (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(mock.last_auth(), "Bearer from-env");
  EXPECT_EQ(gw->identity().provider, "http");
}

TEST(MakeGateway, InvalidHttpConfigIsRejected) {
  ProviderConfig c;
  c.provider = "http";
  c.timeout_ms = 0;
  EXPECT_THROW(make_gateway(c, 2), ConfigError);
}

}  // namespace
}  // namespace vibe
