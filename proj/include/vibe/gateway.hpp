#pragma once

// Client boundary to external foundation-model services: text embedding,
// image captioning and chat completion. The Gateway adds retries with
// exponential backoff, bounded concurrency, a prompt budget, provenance
// identity and a request log on top of a pluggable Provider. StubProvider
// is the deterministic in-process provider used for offline runs and tests.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vibe/common.hpp"

namespace vibe {

using json = nlohmann::json;

class GatewayError : public Error {
 public:
  GatewayError(const std::string& what, std::string operation, int attempts)
      : Error(what), operation_(std::move(operation)), attempts_(attempts) {}
  const std::string& operation() const noexcept { return operation_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string operation_;
  int attempts_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Raised by providers. Retryable failures (timeouts, connection errors,
/// 5xx, 429) are retried by the Gateway; others surface immediately.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

struct RetryPolicy {
  int attempts = 3;
  int backoff_ms = 200;

  /// Delay before retry number `retry` (1-based): backoff * 2^(retry-1).
  std::chrono::milliseconds delay(int retry) const {
    return std::chrono::milliseconds(static_cast<long long>(backoff_ms) << (retry - 1));
  }
};

struct StubSettings {
  /// Exact-text pins: the stub returns this vector for this text.
  std::map<std::string, std::vector<double>> pins;
  /// Response to issue-proposal prompts, one concept per line.
  std::vector<std::string> issues = {
      "dark lighting",       "cluttered background", "small object",     "motion blur",
      "unusual viewpoint",   "reflective surface",   "partial occlusion", "low contrast",
      "transparent material", "thin structures"};
};

struct ProviderConfig {
  std::string provider = "stub";  // "stub" | "http"
  std::string embed_endpoint;
  std::string caption_endpoint;
  std::string chat_endpoint;
  std::string embed_model = "stub-embed";
  std::string caption_model = "stub-caption";
  std::string chat_model = "stub-chat";
  int timeout_ms = 30000;
  int max_concurrency = 4;
  RetryPolicy retry;
  bool privacy_mode = false;
  std::size_t max_prompt_chars = 200000;
  StubSettings stub;

  /// Rejects invalid configurations at startup.
  void check() const {
    if (timeout_ms <= 0) throw ConfigError("timeout must be > 0");
    if (retry.attempts < 1) throw ConfigError("retry attempts must be >= 1");
    if (retry.backoff_ms < 0) throw ConfigError("retry backoff must be >= 0");
    if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (provider != "stub" && provider != "http") throw ConfigError("unknown provider: " + provider);
    if (privacy_mode) {
      const bool caption_via_chat = !caption_endpoint.empty() && caption_endpoint == chat_endpoint;
      const bool no_captioner = provider == "http" && caption_endpoint.empty();
      if (caption_via_chat || no_captioner)
        throw ConfigError("privacy_mode: captions must come from a dedicated caption endpoint, "
                          "not the chat endpoint");
    }
  }
};

inline json to_json(const ProviderConfig& c) {
  json pins = json::object();
  for (const auto& [k, v] : c.stub.pins) pins[k] = v;
  return json{{"provider", c.provider},
              {"embed_endpoint", c.embed_endpoint},
              {"caption_endpoint", c.caption_endpoint},
              {"chat_endpoint", c.chat_endpoint},
              {"embed_model", c.embed_model},
              {"caption_model", c.caption_model},
              {"chat_model", c.chat_model},
              {"timeout_ms", c.timeout_ms},
              {"max_concurrency", c.max_concurrency},
              {"retry", {{"attempts", c.retry.attempts}, {"backoff_ms", c.retry.backoff_ms}}},
              {"privacy_mode", c.privacy_mode},
              {"max_prompt_chars", c.max_prompt_chars},
              {"stub", {{"pins", pins}, {"issues", c.stub.issues}}}};
}

/// Parses a provider manifest. Pins given as {"sample": "<id>"} are left to
/// the caller to resolve (see resolve_sample_pins); numeric arrays are taken
/// verbatim.
inline ProviderConfig provider_config_from_json(const json& j) {
  ProviderConfig c;
  c.provider = j.value("provider", c.provider);
  c.embed_endpoint = j.value("embed_endpoint", c.embed_endpoint);
  c.caption_endpoint = j.value("caption_endpoint", c.caption_endpoint);
  c.chat_endpoint = j.value("chat_endpoint", c.chat_endpoint);
  c.embed_model = j.value("embed_model", c.embed_model);
  c.caption_model = j.value("caption_model", c.caption_model);
  c.chat_model = j.value("chat_model", c.chat_model);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
  if (j.contains("retry")) {
    c.retry.attempts = j["retry"].value("attempts", c.retry.attempts);
    c.retry.backoff_ms = j["retry"].value("backoff_ms", c.retry.backoff_ms);
  }
  c.privacy_mode = j.value("privacy_mode", c.privacy_mode);
  c.max_prompt_chars = j.value("max_prompt_chars", c.max_prompt_chars);
  if (j.contains("stub")) {
    const auto& s = j["stub"];
    if (s.contains("issues")) c.stub.issues = s["issues"].get<std::vector<std::string>>();
    if (s.contains("pins"))
      for (const auto& [text, v] : s["pins"].items())
        if (v.is_array()) c.stub.pins[text] = v.get<std::vector<double>>();
  }
  return c;
}

struct GatewayIdentity {
  std::string provider;
  std::string embed_model;
  std::string caption_model;
  std::string chat_model;
  std::string config_hash;

  bool operator==(const GatewayIdentity&) const = default;
};

inline json to_json(const GatewayIdentity& g) {
  return json{{"provider", g.provider},
              {"embed_model", g.embed_model},
              {"caption_model", g.caption_model},
              {"chat_model", g.chat_model},
              {"config_hash", g.config_hash}};
}

inline GatewayIdentity identity_of(const ProviderConfig& c) {
  json hashed = to_json(c);
  hashed.erase("max_concurrency");  // scheduling only, does not change results
  return GatewayIdentity{c.provider, c.embed_model, c.caption_model, c.chat_model,
                         stable_hash(hashed.dump())};
}

/// Backend of a Gateway. Implementations throw TransportError on failure.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
  virtual std::string caption(const std::string& asset_path, const std::string& image_bytes) = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Marker that identifies issue-proposal prompts to the stub.
inline constexpr std::string_view kIssuesPromptMarker = "Come up with 10 distinct concepts";

class StubProvider final : public Provider {
 public:
  StubProvider(std::size_t dim, StubSettings settings) : dim_(dim), settings_(std::move(settings)) {}

  /// Hash-seeded unit vector, unless the text is pinned.
  std::vector<double> embed(const std::string& text) override {
    if (auto it = settings_.pins.find(text); it != settings_.pins.end()) return it->second;
    return hashed_unit_vector(text, dim_);
  }

  std::string caption(const std::string& asset_path, const std::string&) override {
    return "CAPTION(" + stable_hash(asset_path) + ")";
  }

  std::string complete(const std::string& prompt) override {
    if (prompt.find(kIssuesPromptMarker) != std::string::npos) return join(settings_.issues, "\n");
    return "SUMMARY(" + stable_hash(prompt) + ")";
  }

  static std::vector<double> hashed_unit_vector(const std::string& text, std::size_t dim) {
    Rng rng(fnv1a64(text));
    std::vector<double> v(dim);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& x : v) {
        x = rng.normal();
        norm2 += x * x;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
  }

 private:
  std::size_t dim_;
  StubSettings settings_;
};

struct RequestLogEntry {
  std::string operation;  // embed | caption | complete
  std::string endpoint;
  std::string payload_hash;
  bool carries_image_bytes = false;
  int attempts = 0;
  bool ok = false;
};

/// Thread-safe facade over a Provider.
///
/// Concurrency policy: callers block. At most `max_concurrency` provider
/// calls are in flight; each call honors the provider's per-call timeout and
/// is retried per the RetryPolicy (retryable TransportErrors only).
class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(ProviderConfig config, std::unique_ptr<Provider> provider, std::size_t dim)
      : config_(checked(std::move(config))),
        provider_(std::move(provider)),
        dim_(dim),
        identity_(identity_of(config_)),
        slots_(config_.max_concurrency),
        sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

  static std::shared_ptr<Gateway> stub(std::size_t dim, ProviderConfig config = {}) {
    config.provider = "stub";
    auto provider = std::make_unique<StubProvider>(dim, config.stub);
    return std::make_shared<Gateway>(std::move(config), std::move(provider), dim);
  }

  const GatewayIdentity& identity() const noexcept { return identity_; }
  const ProviderConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return dim_; }

  /// Replaces the sleep used between retries (tests record backoff instead of waiting).
  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }

  std::vector<double> embed_text(const std::string& text) {
    if (text.empty()) throw InvalidArgument("embed_text: empty text");
    auto v = call("embed", config_.embed_endpoint, stable_hash(text), false,
                  [&] { return provider_->embed(text); });
    if (v.size() != dim_)
      throw GatewayError("embedding dim mismatch: provider returned " + std::to_string(v.size()) +
                             ", dataset dim is " + std::to_string(dim_),
                         "embed", 1);
    double norm2 = 0.0;
    for (double x : v) {
      if (!std::isfinite(x)) throw GatewayError("provider returned a non-finite embedding", "embed", 1);
      norm2 += x * x;
    }
    if (norm2 == 0.0) throw GatewayError("provider returned a zero embedding", "embed", 1);
    return v;
  }

  /// Captions one asset. Image bytes only ever go to the caption endpoint.
  std::string caption_image(const std::string& asset_path, const std::string& image_bytes) {
    auto text = call("caption", config_.caption_endpoint, stable_hash(asset_path), !image_bytes.empty(),
                     [&] { return provider_->caption(asset_path, image_bytes); });
    if (text.empty()) throw GatewayError("provider returned an empty caption for " + asset_path, "caption", 1);
    return text;
  }

  std::string complete(const std::string& prompt) {
    if (prompt.size() > config_.max_prompt_chars)
      throw BudgetError("prompt of " + std::to_string(prompt.size()) + " chars exceeds budget of " +
                        std::to_string(config_.max_prompt_chars));
    return call("complete", config_.chat_endpoint, stable_hash(prompt), false,
                [&] { return provider_->complete(prompt); });
  }

  std::vector<RequestLogEntry> request_log() const {
    std::lock_guard lock(log_mutex_);
    return log_;
  }

  std::size_t call_count(const std::string& operation) const {
    std::lock_guard lock(log_mutex_);
    std::size_t n = 0;
    for (const auto& e : log_) n += e.operation == operation ? 1 : 0;
    return n;
  }

 private:
  static ProviderConfig checked(ProviderConfig c) {
    c.check();
    return c;
  }

  template <typename F>
  auto call(const std::string& operation, const std::string& endpoint, std::string payload_hash,
            bool image_bytes, F&& fn) -> decltype(fn()) {
    RequestLogEntry entry{operation, endpoint, std::move(payload_hash), image_bytes, 0, false};
    struct SlotGuard {
      std::counting_semaphore<>& s;
      explicit SlotGuard(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
      ~SlotGuard() { s.release(); }
    };
    for (int attempt = 1;; ++attempt) {
      entry.attempts = attempt;
      try {
        SlotGuard slot(slots_);
        auto result = fn();
        entry.ok = true;
        record(entry);
        return result;
      } catch (const TransportError& e) {
        if (!e.retryable() || attempt >= config_.retry.attempts) {
          record(entry);
          throw GatewayError(operation + " failed after " + std::to_string(attempt) + " attempt(s): " + e.what(),
                             operation, attempt);
        }
      }
      sleep_(config_.retry.delay(attempt));
    }
  }

  void record(const RequestLogEntry& e) {
    std::lock_guard lock(log_mutex_);
    log_.push_back(e);
  }

  ProviderConfig config_;
  std::unique_ptr<Provider> provider_;
  std::size_t dim_;
  GatewayIdentity identity_;
  std::counting_semaphore<> slots_;
  Sleeper sleep_;
  mutable std::mutex log_mutex_;
  std::vector<RequestLogEntry> log_;
};

}  // namespace vibe
