#pragma once

// Live provider over HTTP(S)+JSON, provider-manifest loading and the
// gateway factory. Wire schemas are documented in docs/providers.md.

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibe/detail/httplib.hpp"

#include "vibe/dataset.hpp"
#include "vibe/gateway.hpp"

namespace vibe {

/// Environment variable holding the bearer token for provider endpoints.
inline constexpr const char* kApiKeyEnv = "VIBE_API_KEY";

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

inline Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint is not an absolute URL: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme: " + scheme);
  const auto slash = url.find('/', scheme_end + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

class HttpProvider final : public Provider {
 public:
  HttpProvider(ProviderConfig config, std::string api_key)
      : config_(std::move(config)), api_key_(std::move(api_key)) {}

  std::vector<double> embed(const std::string& text) override {
    const auto j = post(config_.embed_endpoint, {{"model", config_.embed_model}, {"input", text}});
    if (!j.contains("embedding") || !j["embedding"].is_array())
      throw TransportError("embed response lacks an 'embedding' array", false);
    std::vector<double> v;
    for (const auto& x : j["embedding"]) {
      if (!x.is_number()) throw TransportError("embed response has a non-numeric entry", false);
      v.push_back(x.get<double>());
    }
    return v;
  }

  std::string caption(const std::string& asset_path, const std::string& image_bytes) override {
    json body{{"model", config_.caption_model}, {"asset", asset_path}};
    body["image_base64"] = image_bytes.empty() ? json(nullptr) : json(httplib::detail::base64_encode(image_bytes));
    return text_field(post(config_.caption_endpoint, body), "caption");
  }

  std::string complete(const std::string& prompt) override {
    return text_field(post(config_.chat_endpoint, {{"model", config_.chat_model}, {"prompt", prompt}}), "text");
  }

 private:
  static std::string text_field(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string())
      throw TransportError(std::string("response lacks a string '") + key + "'", false);
    return j[key].get<std::string>();
  }

  json post(const std::string& endpoint, const json& body) {
    if (endpoint.empty()) throw TransportError("endpoint not configured", false);
    const Url url = split_url(endpoint);
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(endpoint + ": " + httplib::to_string(res.error()), true);
    if (res->status == 429 || res->status >= 500)
      throw TransportError(endpoint + ": HTTP " + std::to_string(res->status), true);
    if (res->status < 200 || res->status >= 300)
      throw TransportError(endpoint + ": HTTP " + std::to_string(res->status) + " " + res->body, false);
    try {
      return json::parse(res->body);
    } catch (const json::parse_error&) {
      throw TransportError(endpoint + ": response is not JSON", false);
    }
  }

  ProviderConfig config_;
  std::string api_key_;
};

inline ProviderConfig load_provider_config(const fs::path& path) {
  try {
    return provider_config_from_json(json::parse(detail::read_file(path)));
  } catch (const json::exception& e) {
    throw ConfigError("provider manifest " + path.string() + ": " + e.what());
  }
}

/// Resolves stub pins written as {"sample": "<id>"} to that sample's stored
/// embedding, so fixtures can pin a phrase onto real dataset geometry.
inline void resolve_sample_pins(ProviderConfig& config, const json& manifest, const Dataset& ds) {
  if (!manifest.contains("stub") || !manifest["stub"].contains("pins")) return;
  for (const auto& [text, v] : manifest["stub"]["pins"].items()) {
    if (!v.is_object() || !v.contains("sample")) continue;
    const auto row = ds.store().row(ds.index_of(v["sample"].get<std::string>()));
    config.stub.pins[text] = std::vector<double>(row.begin(), row.end());
  }
}

/// Builds the gateway named by the configuration: the in-process stub or
/// the HTTP provider with the bearer token from VIBE_API_KEY.
inline std::shared_ptr<Gateway> make_gateway(const ProviderConfig& config, std::size_t dim) {
  if (config.provider == "stub") return Gateway::stub(dim, config);
  config.check();
  const char* key = std::getenv(kApiKeyEnv);
  return std::make_shared<Gateway>(config, std::make_unique<HttpProvider>(config, key ? key : ""), dim);
}

/// Loads a provider manifest (stub when `path` is empty) and builds its gateway.
inline std::shared_ptr<Gateway> make_gateway(const fs::path& path, const Dataset& ds) {
  if (path.empty()) return Gateway::stub(ds.dim());
  json manifest;
  try {
    manifest = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("provider manifest " + path.string() + ": " + e.what());
  }
  ProviderConfig config = provider_config_from_json(manifest);
  resolve_sample_pins(config, manifest, ds);
  return make_gateway(config, ds.dim());
}

}  // namespace vibe
