#pragma once

// HTTP routes for the analysis service. All JSON endpoints live under /v1;
// asset files are served read-only from the dataset's asset root.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vibe/detail/httplib.hpp"
#include "vibe/service/app.hpp"

namespace vibe::service {

inline std::string content_type_for(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".json") return "application/json";
  if (ext == ".txt") return "text/plain";
  return "application/octet-stream";
}

class Server {
 public:
  explicit Server(App& app) : app_(app) {
    // The library default adds SO_REUSEPORT, which lets a second server
    // silently share a busy port.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  /// Binds and serves until stop(); returns false if the port is unavailable.
  bool listen(const std::string& host, int port) { return http_.listen(host, port); }

  /// Binds to an ephemeral port and returns it (or -1); call listen_after_bind() next.
  int bind_any(const std::string& host) { return http_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
  bool listen_after_bind() { return http_.listen_after_bind(); }

  void stop() { http_.stop(); }
  void wait_until_ready() const { http_.wait_until_ready(); }
  bool running() const { return http_.is_running(); }

 private:
  using Handler = std::function<json(const httplib::Request&)>;

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw HttpError(400, std::string("request body is not JSON: ") + e.what());
    }
  }

  static std::optional<std::string> param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
  }

  static std::optional<std::size_t> size_param(const httplib::Request& req, const char* key) {
    const auto v = param(req, key);
    if (!v) return std::nullopt;
    try {
      std::size_t used = 0;
      const long long n = std::stoll(*v, &used);
      if (used != v->size() || n < 0) throw std::invalid_argument(key);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw HttpError(400, std::string("query parameter '") + key + "' must be a non-negative integer");
    }
  }

  /// Wraps a handler: JSON in, JSON out, exceptions mapped to error bodies.
  static httplib::Server::Handler wrap(Handler h, int ok_status = 200) {
    return [h = std::move(h), ok_status](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, ok_status, h(req));
      } catch (...) {
        const json err = error_body(std::current_exception());
        send(res, err["status"].get<int>(), json{{"error", err}});
      }
    };
  }

  void routes() {
    http_.Get("/v1/health", wrap([this](const auto&) { return app_.health(); }));
    http_.Get("/v1/session", wrap([this](const auto&) { return app_.session(); }));
    http_.Get("/v1/overview", wrap([this](const httplib::Request& req) {
                return app_.overview(param(req, "metric"), param(req, "projection").value_or("pca"));
              }));
    http_.Post("/v1/clusters", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = body_of(req);
        if (body.is_object() && body.value("async", false)) send(res, 202, app_.submit_clusters(body));
        else send(res, 200, app_.clusters(body));
      } catch (...) {
        const json err = error_body(std::current_exception());
        send(res, err["status"].get<int>(), json{{"error", err}});
      }
    });
    http_.Get(R"(/v1/jobs/([^/]+))", wrap([this](const httplib::Request& req) { return app_.job(req.matches[1]); }));
    http_.Post("/v1/subgroups", wrap([this](const httplib::Request& req) { return app_.create_subgroup(body_of(req)); },
                                     201));
    http_.Get(R"(/v1/subgroups/([^/]+))", wrap([this](const httplib::Request& req) {
                return app_.subgroup_detail(req.matches[1], param(req, "metric"), size_param(req, "n"),
                                            size_param(req, "neighbors"));
              }));
    http_.Post(R"(/v1/subgroups/([^/]+)/summarize)", wrap([this](const httplib::Request& req) {
                 return app_.summarize(req.matches[1], body_of(req));
               }));
    http_.Post(R"(/v1/subgroups/([^/]+)/issues)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = body_of(req);
        if (body.value("async", false)) send(res, 202, app_.submit_issues(req.matches[1], body));
        else send(res, 200, app_.issues(req.matches[1], body));
      } catch (...) {
        const json err = error_body(std::current_exception());
        send(res, err["status"].get<int>(), json{{"error", err}});
      }
    });
    http_.Post("/v1/search", wrap([this](const httplib::Request& req) { return app_.search(body_of(req)); }, 201));
    http_.Post("/v1/compare", wrap([this](const httplib::Request& req) { return app_.compare(body_of(req)); }));
    http_.Get("/v1/history", wrap([this](const auto&) { return app_.history(); }));
    http_.Get("/v1/settings", wrap([this](const auto&) { return app_.settings(); }));
    http_.Put("/v1/settings", wrap([this](const httplib::Request& req) { return app_.put_settings(body_of(req)); }));
    http_.Get(R"(/v1/samples/([^/]+))", wrap([this](const httplib::Request& req) { return app_.sample(req.matches[1]); }));
    http_.Get(R"(/v1/assets/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto path = app_.asset_path(req.matches[1]);
      if (!path) {
        send(res, 404, json{{"error", {{"status", 404}, {"message", "asset not found"}, {"detail", nullptr}}}});
        return;
      }
      std::ifstream in(*path, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      res.set_content(ss.str(), content_type_for(*path));
    });
    http_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      send(res, res.status, json{{"error", {{"status", res.status}, {"message", "no such route"}, {"detail", nullptr}}}});
    });
  }

  App& app_;
  httplib::Server http_;
};

}  // namespace vibe::service
