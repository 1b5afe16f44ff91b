#pragma once

// Endpoint logic of the analysis service, independent of the HTTP layer.
// Every handler takes the request body or parameters and returns the JSON
// response document; failures raise HttpError with the status to send.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibe/analysis.hpp"
#include "vibe/clustering.hpp"
#include "vibe/dataset.hpp"
#include "vibe/gateway.hpp"
#include "vibe/hypothesis.hpp"
#include "vibe/projection.hpp"
#include "vibe/search.hpp"
#include "vibe/service/jobs.hpp"
#include "vibe/service/store.hpp"
#include "vibe/stats.hpp"

namespace vibe::service {

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what, json detail = nullptr)
      : Error(what), status_(status), detail_(std::move(detail)) {}
  int status() const noexcept { return status_; }
  const json& detail() const noexcept { return detail_; }

 private:
  int status_;
  json detail_;
};

/// {status, message, detail} for any exception escaping a handler.
inline json error_body(std::exception_ptr ep) {
  auto body = [](int status, const std::string& message, json detail = nullptr) {
    return json{{"status", status}, {"message", message}, {"detail", detail}};
  };
  try {
    std::rethrow_exception(ep);
  } catch (const HttpError& e) {
    return body(e.status(), e.what(), e.detail());
  } catch (const NotFoundError& e) {
    return body(404, e.what());
  } catch (const UniformPerformanceError& e) {
    return body(422, e.what());
  } catch (const MissingCaptionsError& e) {
    return body(409, e.what(), json{{"missing_ids", e.ids()}});
  } catch (const UnparseableResponseError& e) {
    return body(502, e.what(), json{{"raw_response", e.raw()}});
  } catch (const GatewayError& e) {
    return body(502, e.what(), json{{"operation", e.operation()}, {"attempts", e.attempts()}});
  } catch (const BudgetError& e) {
    return body(422, e.what());
  } catch (const InvalidArgument& e) {
    return body(400, e.what());
  } catch (const json::exception& e) {
    return body(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return body(500, e.what());
  }
}

/// On-disk layout of a dataset workspace.
struct Workspace {
  fs::path root;

  fs::path dataset_dir() const { return root / "dataset"; }
  fs::path manifest() const { return dataset_dir() / "manifest.json"; }
  fs::path meta() const { return root / "workspace.json"; }
  fs::path store() const { return root / "store.json"; }
  fs::path history() const { return root / "history.jsonl"; }
  fs::path subgroups_dir() const { return root / "subgroups"; }
  bool ingested() const { return fs::exists(manifest()); }
};

/// Copies a dataset into a workspace, remembering where its assets live.
inline void write_workspace(const Workspace& w, const Dataset& ds) {
  write_dataset(w.dataset_dir(), ds);
  const json meta{{"asset_root", fs::absolute(ds.manifest().asset_root).lexically_normal().string()},
                  {"name", ds.name()}};
  write_atomically(w.meta(), meta.dump(2) + "\n");
}

/// Loads the workspace dataset with its original asset root.
inline Dataset open_workspace_dataset(const Workspace& w) {
  if (!w.ingested()) throw ConfigError("dataset not ingested: " + w.manifest().string() + " is missing");
  Dataset ds = ingest_manifest(w.manifest());
  if (!fs::exists(w.meta())) return ds;
  const json meta = json::parse(detail::read_file(w.meta()));
  DatasetManifest m = ds.manifest();
  m.asset_root = meta.value("asset_root", m.asset_root.string());
  std::vector<SampleRecord> records(ds.records().begin(), ds.records().end());
  return Dataset(std::move(m), std::move(records), ds.store());
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

struct AppOptions {
  std::size_t workers = 2;
  std::size_t representatives = 3;
  std::size_t extremes = 5;
  std::size_t neighbors = 5;
  std::size_t bins = 20;
  PromptBundle bundle;
  std::function<std::string()> clock = utc_timestamp;
};

class App {
 public:
  App(Dataset ds, std::shared_ptr<Gateway> gateway, const fs::path& state_dir, AppOptions opts = {})
      : ds_(std::move(ds)),
        gateway_(std::move(gateway)),
        opts_(std::move(opts)),
        store_(state_dir / "store.json"),
        history_(state_dir / "history.jsonl"),
        jobs_(opts_.workers, error_body) {
    if (ds_.manifest().metric_descriptors.empty()) throw ConfigError("dataset declares no metrics");
    if (gateway_->dim() != ds_.dim()) throw ConfigError("gateway dim does not match dataset dim");
    opts_.bundle.check();
  }

  const Dataset& dataset() const noexcept { return ds_; }
  DocumentStore& store() noexcept { return store_; }
  const HistoryLog& history_log() const noexcept { return history_; }
  Gateway& gateway() noexcept { return *gateway_; }

  // GET /v1/health
  json health() const {
    return json{{"status", "ok"},
                {"name", ds_.name()},
                {"samples", ds_.size()},
                {"dim", ds_.dim()},
                {"metrics", metric_names()},
                {"gateway", to_json(gateway_->identity())}};
  }

  // GET /v1/session
  json session() const {
    const json s = store_.session();
    return json{{"id", "default"},
                {"dataset", ds_.name()},
                {"clustering", s.value("clustering", json(nullptr))},
                {"cluster_ids", s.value("cluster_ids", json::array())},
                {"projection", s.value("projection", json("pca"))},
                {"settings", to_json(store_.settings())},
                {"history_length", history_.entries().size()}};
  }

  // GET /v1/overview?metric=&projection=
  json overview(const std::optional<std::string>& metric, const std::string& projection_method = "pca") {
    const auto& desc = metric_or_default(metric);
    const auto method = parse_projection(projection_method);
    const Projection& p = projection(method);
    const auto values = metric_vector(ds_, desc.name);
    const auto domain = display_domain(ds_, desc);
    json coords = json::array();
    for (const auto& c : p.coords) coords.push_back({c[0], c[1]});
    return json{{"metric", to_json(desc)},
                {"histogram", to_json(histogram(values, opts_.bins, domain))},
                {"ids", ds_.ids()},
                {"values", values},
                {"projection",
                 {{"method", to_string(p.method)},
                  {"coords", coords},
                  {"explained_variance_ratio", {p.explained_variance_ratio[0], p.explained_variance_ratio[1]}}}},
                {"settings", to_json(store_.settings())}};
  }

  // POST /v1/clusters
  json clusters(const json& body) {
    if (!body.is_object()) throw InvalidArgument("clustering request must be a JSON object");
    json config_json = body;
    for (const char* k : {"metric", "async", "representatives"}) config_json.erase(k);
    const auto config = clustering_config_from_json(config_json);
    const auto& desc = metric_or_default(optional_string(body, "metric"));
    const std::size_t n_rep = body.value("representatives", opts_.representatives);
    if (n_rep < 1) throw InvalidArgument("representatives must be >= 1");

    std::unique_ptr<Projection> proj;
    if (config.space == ClusterSpace::Projected2d) proj = std::make_unique<Projection>(projection(ProjectionMethod::Pca));
    auto groups = cluster(ds_, config, proj.get());
    std::vector<PersistedSubgroup> docs;
    const std::string now = opts_.clock();
    for (auto& g : groups) {
      if (!g.cache.representative_ids) g.cache.representative_ids = representatives(g, ds_, n_rep);
      docs.push_back({g, now});
    }
    store_.insert_all_if_absent(docs);
    json ids = json::array();
    for (const auto& g : groups) ids.push_back(g.id);
    store_.set_session_field("clustering", to_json(config));
    store_.set_session_field("cluster_ids", ids);

    json rows = json::array();
    std::size_t rank = 0;
    for (const auto& r : rank_subgroups(groups, ds_, desc.name)) {
      const auto stored = store_.get(r.id)->subgroup;
      const auto& g = *std::find_if(groups.begin(), groups.end(), [&](const Subgroup& s) { return s.id == r.id; });
      const auto reps = representatives(g, ds_, n_rep);
      json top = json::array();
      if (stored.cache.issues)
        for (std::size_t i = 0; i < std::min<std::size_t>(3, stored.cache.issues->size()); ++i)
          top.push_back(issue_summary((*stored.cache.issues)[i]));
      rows.push_back({{"rank", ++rank},
                      {"id", r.id},
                      {"size", r.size},
                      {"mean", finite_or_null(r.mean)},
                      {"representatives", sample_cards(reps)},
                      {"summary", stored.cache.summary_text ? json(*stored.cache.summary_text) : json(nullptr)},
                      {"top_issues", top}});
    }
    return json{{"config", to_json(config)}, {"metric", desc.name}, {"clusters", rows}};
  }

  // POST /v1/clusters with "async": true
  json submit_clusters(const json& body) {
    const std::string id = jobs_.submit("clusters", [this, body] { return clusters(body); });
    return job(id);
  }

  // GET /v1/jobs/{id}
  json job(const std::string& id) const {
    auto r = jobs_.get(id);
    if (!r) throw HttpError(404, "unknown job: " + id);
    return to_json(*r);
  }

  std::optional<JobRecord> wait_job(const std::string& id, std::chrono::milliseconds timeout) const {
    return jobs_.wait(id, timeout);
  }

  // GET /v1/subgroups/{id}?metric=&n=&neighbors=
  json subgroup_detail(const std::string& id, const std::optional<std::string>& metric, std::optional<std::size_t> n,
                       std::optional<std::size_t> k_neighbors) {
    const auto p = load(id);
    const Subgroup& s = p.subgroup;
    const auto& desc = metric_or_default(metric);
    const std::size_t n_ext = n.value_or(opts_.extremes);
    if (n_ext < 1) throw InvalidArgument("n must be >= 1");

    json out{{"subgroup", to_json(s)}, {"created_at", p.created_at}, {"size", s.size()}, {"metric", desc.name}};
    out["mean"] = s.empty() ? json(nullptr) : finite_or_null(mean_metric(s, ds_, desc.name));
    out["dataset_mean"] = dataset_mean(desc.name);
    out["summary"] = s.cache.summary_text ? json(*s.cache.summary_text) : json(nullptr);
    out["representatives"] = sample_cards(s.empty() ? std::vector<std::string>{}
                                                    : representatives(s, ds_, opts_.representatives));
    json worst = json::array(), best = json::array();
    if (!s.empty()) {
      const auto ex = extremes(s, ds_, desc.name, n_ext);
      worst = sample_cards(ex.worst, desc.name);
      best = sample_cards(ex.best, desc.name);
    }
    out["extremes"] = {{"worst", worst}, {"best", best}};
    json issues = json::array();
    if (s.cache.issues)
      for (const auto& i : *s.cache.issues) issues.push_back(issue_summary(i));
    out["issues"] = s.cache.issues ? issues : json(nullptr);
    out["neighbors"] = neighbors(s, desc, k_neighbors.value_or(opts_.neighbors));
    history_.append(id, opts_.clock());
    return out;
  }

  // POST /v1/subgroups {members, label}
  json create_subgroup(const json& body) {
    if (!body.is_object() || !body.contains("members")) throw InvalidArgument("body must contain 'members'");
    auto members = body.at("members").get<std::vector<std::string>>();
    if (members.empty()) throw InvalidArgument("members must be nonempty");
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    for (const auto& m : members) ds_.index_of(m);
    auto s = make_custom_subgroup(std::move(members), body.value("label", std::string()));
    const auto p = store_.insert_if_absent({s, opts_.clock()});
    history_.append(p.subgroup.id, opts_.clock());
    return json{{"id", p.subgroup.id}, {"subgroup", to_json(p.subgroup)}};
  }

  // POST /v1/subgroups/{id}/summarize {max_words, force, budget_chars}
  json summarize(const std::string& id, const json& request) {
    const json body = as_object(request);
    SummaryOptions o;
    o.max_words = body.value("max_words", kTableSummaryWords);
    o.force = body.value("force", false);
    o.budget_chars = body.value("budget_chars", kDefaultContextBudget);
    if (o.max_words < 1) throw InvalidArgument("max_words must be >= 1");
    std::lock_guard lock(cache_mutex_);
    auto p = load(id);
    const std::size_t before = gateway_->call_count("complete");
    const auto text = summarize_subgroup(p.subgroup, ds_, *gateway_, opts_.bundle, o);
    const bool reused = gateway_->call_count("complete") == before;
    if (!reused) store_.put(p);
    return json{{"id", id}, {"summary", text}, {"max_words", o.max_words}, {"cached", reused}};
  }

  // POST /v1/subgroups/{id}/issues {metric, per_group_n, force}
  json issues(const std::string& id, const json& request) {
    const json body = as_object(request);
    const auto& desc = metric_or_default(optional_string(body, "metric"));
    const std::size_t per_group_n = body.value("per_group_n", kDefaultPerGroupN);
    if (per_group_n < 1) throw InvalidArgument("per_group_n must be >= 1");
    const bool force = body.value("force", false);
    std::lock_guard lock(cache_mutex_);
    auto p = load(id);
    auto& cache = p.subgroup.cache.issues;
    const bool reusable = !force && cache && !cache->empty() && reusable_issues(cache->front(), desc.name, per_group_n);
    if (!reusable) {
      cache = propose_issues(p.subgroup, ds_, desc.name, *gateway_, opts_.bundle, per_group_n);
      store_.put(p);
    }
    json list = json::array();
    for (const auto& i : *cache) list.push_back(issue_summary(i));
    json split = cache->empty() ? json(nullptr) : cache->front().provenance.value("split", json(nullptr));
    return json{{"id", id}, {"metric", desc.name}, {"issues", list}, {"split", split}, {"cached", reusable}};
  }

  json submit_issues(const std::string& id, const json& request) {
    const json body = as_object(request);
    load(id);
    const std::string job_id = jobs_.submit("issues", [this, id, body] { return issues(id, body); });
    return job(job_id);
  }

  // POST /v1/search {ConceptQuery}
  json search(const json& body) {
    const auto query = concept_query_from_json(body);
    auto result = concept_search(ds_, query, *gateway_);
    const auto p = store_.insert_if_absent({result.subgroup, opts_.clock()});
    history_.append(p.subgroup.id, opts_.clock());
    json hits = json::array();
    for (const auto& h : result.hits) hits.push_back({{"sample_id", h.sample_id}, {"similarity", h.similarity}});
    return json{{"id", p.subgroup.id}, {"query", to_json(query)}, {"size", p.subgroup.size()}, {"hits", hits}};
  }

  // POST /v1/compare {subgroup_ids, exclude_shared, bins}
  json compare(const json& request) {
    const json body = as_object(request);
    const auto ids = body.at("subgroup_ids").get<std::vector<std::string>>();
    if (ids.empty() || ids.size() > 2) throw InvalidArgument("subgroup_ids must name one or two subgroups");
    std::vector<Subgroup> sel;
    for (const auto& id : ids) sel.push_back(load(id).subgroup);
    CompareOptions o;
    o.exclude_shared = body.value("exclude_shared", true);
    o.bins = body.value("bins", opts_.bins);
    if (o.bins < 1) throw InvalidArgument("bins must be >= 1");
    return to_json(compare_subgroups(sel, ds_, o));
  }

  // GET /v1/history
  json history() const {
    const auto& desc = metric_or_default(std::nullopt);
    const double base = mean_of_all(desc.name);
    json entries = json::array();
    for (const auto& e : history_.entries()) {
      json card = to_json(e);
      const auto p = store_.get(e.subgroup_id);
      if (!p) {
        card.update({{"kind", nullptr}, {"size", 0}, {"representative", nullptr}, {"summary", nullptr},
                     {"badge", nullptr}});
        entries.push_back(card);
        continue;
      }
      const Subgroup& s = p->subgroup;
      card["kind"] = to_string(s.kind);
      card["size"] = s.size();
      card["representative"] = s.empty() ? json(nullptr) : sample_cards(representatives(s, ds_, 1))[0];
      card["summary"] = s.cache.summary_text ? json(*s.cache.summary_text) : json(nullptr);
      if (s.empty()) {
        card["badge"] = nullptr;
      } else {
        const double m = mean_metric(s, ds_, desc.name);
        card["badge"] = {{"metric", desc.name}, {"mean", m}, {"performance", desc.worse(m, base) ? "low" : "high"}};
      }
      entries.push_back(card);
    }
    return json{{"entries", entries}};
  }

  // GET /v1/settings
  json settings() const { return to_json(store_.settings()); }

  // PUT /v1/settings
  json put_settings(const json& body) {
    const auto s = settings_from_json(body, store_.settings());
    if (s.metric && !ds_.has_metric(*s.metric)) throw HttpError(404, "unknown metric: " + *s.metric);
    store_.set_settings(s);
    return to_json(s);
  }

  // GET /v1/samples/{id}
  json sample(const std::string& id) const {
    const auto i = ds_.find(id);
    if (!i) throw HttpError(404, "unknown sample: " + id);
    json j = to_json(ds_.record(*i));
    j["index"] = *i;
    return j;
  }

  /// Resolves an asset path under the asset root, refusing anything that
  /// would escape it.
  std::optional<fs::path> asset_path(const std::string& relative) const {
    const fs::path rel(relative);
    if (relative.empty() || rel.is_absolute()) return std::nullopt;
    for (const auto& part : rel)
      if (part == "..") return std::nullopt;
    const fs::path root = fs::weakly_canonical(ds_.manifest().asset_root);
    const fs::path full = fs::weakly_canonical(root / rel);
    const auto [r, f] = std::mismatch(root.begin(), root.end(), full.begin(), full.end());
    if (r != root.end()) return std::nullopt;
    if (!fs::is_regular_file(full)) return std::nullopt;
    return full;
  }

 private:
  static json as_object(const json& body) {
    if (body.is_null()) return json::object();
    if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
    return body;
  }

  static std::optional<std::string> optional_string(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || body[key].is_null()) return std::nullopt;
    return body[key].get<std::string>();
  }

  static json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

  static ProjectionMethod parse_projection(const std::string& s) {
    try {
      return parse_projection_method(s);
    } catch (const Error&) {
      throw InvalidArgument("unknown projection: " + s);
    }
  }

  std::vector<std::string> metric_names() const {
    std::vector<std::string> out;
    for (const auto& m : ds_.manifest().metric_descriptors) out.push_back(m.name);
    return out;
  }

  const MetricDescriptor& metric_or_default(const std::optional<std::string>& name) const {
    std::optional<std::string> chosen = name;
    if (!chosen) chosen = store_.settings().metric;
    if (!chosen) return ds_.manifest().metric_descriptors.front();
    if (!ds_.has_metric(*chosen)) throw HttpError(404, "unknown metric: " + *chosen);
    return ds_.metric(*chosen);
  }

  double mean_of_all(const std::string& metric) const {
    const auto v = metric_vector(ds_, metric);
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  json dataset_mean(const std::string& metric) const { return mean_of_all(metric); }

  PersistedSubgroup load(const std::string& id) const {
    auto p = store_.get(id);
    if (!p) throw HttpError(404, "unknown subgroup: " + id);
    return *p;
  }

  const Projection& projection(ProjectionMethod method) {
    std::lock_guard lock(projection_mutex_);
    auto it = projections_.find(method);
    if (it == projections_.end()) it = projections_.emplace(method, project(ds_, method)).first;
    return it->second;
  }

  json sample_cards(const std::vector<std::string>& ids, const std::string& metric = {}) const {
    json out = json::array();
    for (const auto& id : ids) {
      const auto& r = ds_.record(ds_.index_of(id));
      json c{{"id", id},
             {"input_asset", r.input_asset},
             {"truth_assets", r.truth_assets},
             {"prediction_assets", r.prediction_assets}};
      if (!metric.empty()) c["value"] = r.metrics.at(metric);
      out.push_back(c);
    }
    return out;
  }

  static json issue_summary(const CandidateIssue& i) {
    return json{{"text", i.text},
                {"confidence", i.confidence},
                {"exceeds_word_limit", i.exceeds_word_limit},
                {"prompt_hash", i.provenance.value("prompt_hash", std::string())}};
  }

  bool reusable_issues(const CandidateIssue& first, const std::string& metric, std::size_t per_group_n) const {
    const auto& prov = first.provenance;
    if (!prov.contains("split") || !prov.contains("gateway")) return false;
    return prov["split"].value("metric_name", std::string()) == metric &&
           prov["split"].value("per_group_n", std::size_t{0}) == per_group_n &&
           prov["gateway"] == to_json(gateway_->identity());
  }

  json neighbors(const Subgroup& target, const MetricDescriptor& desc, std::size_t k) const {
    const json session = store_.session();
    std::vector<Subgroup> candidates;
    for (const auto& id : session.value("cluster_ids", json::array())) {
      auto p = store_.get(id.get<std::string>());
      if (p && p->subgroup.id != target.id && !p->subgroup.empty()) candidates.push_back(p->subgroup);
    }
    json out = json::array();
    if (target.empty()) return out;
    const double base = mean_of_all(desc.name);
    for (const auto& nb : neighbor_clusters(target, candidates, ds_, k)) {
      const auto& s = *std::find_if(candidates.begin(), candidates.end(),
                                    [&](const Subgroup& c) { return c.id == nb.subgroup_id; });
      const double m = mean_metric(s, ds_, desc.name);
      out.push_back({{"id", s.id},
                     {"centroid_similarity", nb.centroid_similarity},
                     {"size", s.size()},
                     {"mean", m},
                     {"performance", desc.worse(m, base) ? "low" : "high"},
                     {"representative", sample_cards(representatives(s, ds_, 1))[0]},
                     {"summary", s.cache.summary_text ? json(*s.cache.summary_text) : json(nullptr)}});
    }
    return out;
  }

  Dataset ds_;
  std::shared_ptr<Gateway> gateway_;
  AppOptions opts_;
  mutable DocumentStore store_;
  mutable HistoryLog history_;
  std::mutex cache_mutex_;
  std::mutex projection_mutex_;
  std::map<ProjectionMethod, Projection> projections_;
  JobQueue jobs_;
};

}  // namespace vibe::service
