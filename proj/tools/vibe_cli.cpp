// vibe: batch command line for dataset workspaces.
//
//   vibe ingest --manifest run/manifest.json --out ws
//   vibe precompute-captions --data ws --stub
//   vibe cluster --data ws --k 20 --seed 42
//   vibe report --data ws --metric loss --top 5
//   vibe serve --data ws --port 8080
//   vibe synth --out demo-run

#include <csignal>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "vibe/gateway_http.hpp"
#include "vibe/service/server.hpp"
#include "vibe/synthetic.hpp"

namespace {

using namespace vibe;
using service::Workspace;

struct GatewayFlags {
  bool stub = false;
  std::string providers;

  void add_to(CLI::App* cmd) {
    cmd->add_flag("--stub", stub, "Use the deterministic offline provider");
    cmd->add_option("--providers", providers, "Provider manifest (JSON); default is the stub")
        ->check(CLI::ExistingFile);
  }

  std::shared_ptr<Gateway> make(const Dataset& ds) const {
    if (stub && !providers.empty()) {
      // Keeps stub pins and issues from the manifest but never goes live.
      auto cfg = load_provider_config(providers);
      cfg.provider = "stub";
      resolve_sample_pins(cfg, json::parse(detail::read_file(providers)), ds);
      return Gateway::stub(ds.dim(), cfg);
    }
    return make_gateway(fs::path(providers), ds);
  }
};

std::string default_data_dir() {
  const char* env = std::getenv("VIBE_DATA_ROOT");
  return env ? env : "";
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

std::string md_cell(std::string s) {
  for (auto& c : s)
    if (c == '|' || c == '\n') c = ' ';
  return s;
}

int run_ingest(const std::string& manifest, const std::string& out) {
  const Dataset ds = ingest_manifest(manifest);
  const auto report = validate_dataset(ds);
  for (const auto& f : report.findings)
    if (!f.passed) std::cerr << (f.severity == Severity::Error ? "error: " : "note: ") << f.message << '\n';
  if (!report.ok()) return 1;
  const Workspace w{out};
  service::write_workspace(w, ds);
  std::cout << "ingested " << ds.name() << ": " << ds.size() << " samples, dim " << ds.dim() << ", caption coverage "
            << fixed(100.0 * caption_coverage(ds), 1) << "% -> " << w.root.string() << '\n';
  return 0;
}

int run_precompute(const std::string& data, const GatewayFlags& gw_flags, bool force) {
  const Workspace w{data};
  const Dataset ds = service::open_workspace_dataset(w);
  auto gw = gw_flags.make(ds);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = ds.record(i).caption;
    if (force || !c || c->empty()) todo.push_back(i);
  }
  std::vector<std::string> captions(todo.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k; (k = next++) < todo.size();) {
      try {
        const auto& r = ds.record(todo[k]);
        std::string bytes;
        if (gw->config().provider != "stub") {
          const auto path = ds.resolve_asset(r.input_asset);
          if (!fs::is_regular_file(path)) throw DataError("unreadable asset: " + path.string(), r.id);
          bytes = detail::read_file(path);
        }
        captions[k] = gw->caption_image(r.input_asset, bytes);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = todo.size();
      }
    }
  };
  std::vector<std::thread> threads;
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(gw->config().max_concurrency), todo.size());
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  std::map<std::string, std::string> by_id;
  for (std::size_t k = 0; k < todo.size(); ++k) by_id[ds.record(todo[k]).id] = captions[k];
  const Dataset updated = ds.with_captions(by_id);
  write_dataset(w.dataset_dir(), updated);
  std::cout << "captioned " << todo.size() << " samples; coverage " << fixed(100.0 * caption_coverage(updated), 1)
            << "%\n";
  return 0;
}

service::AppOptions app_options(const std::string& prompts) {
  service::AppOptions o;
  if (!prompts.empty()) o.bundle = load_prompt_bundle(prompts);
  return o;
}

int run_cluster(const std::string& data, const json& request) {
  const Workspace w{data};
  Dataset ds = service::open_workspace_dataset(w);
  const std::size_t dim = ds.dim();
  service::App app(std::move(ds), Gateway::stub(dim), w.root);
  const json result = app.clusters(request);
  fs::remove_all(w.subgroups_dir());
  fs::create_directories(w.subgroups_dir());
  json index = json::array();
  for (const auto& row : result["clusters"]) {
    const std::string id = row["id"];
    Subgroup s = app.store().get(id)->subgroup;
    s.cache = {};
    s.cache.representative_ids = app.store().get(id)->subgroup.cache.representative_ids;
    service::write_atomically(w.subgroups_dir() / (id + ".json"), to_json(s).dump(2) + "\n");
    index.push_back({{"rank", row["rank"]}, {"id", id}, {"size", row["size"]}, {"mean", row["mean"]}});
  }
  service::write_atomically(w.subgroups_dir() / "index.json",
                            json{{"config", result["config"]}, {"metric", result["metric"]}, {"clusters", index}}.dump(2) +
                                "\n");
  std::cout << "wrote " << index.size() << " subgroups to " << w.subgroups_dir().string() << '\n';
  return 0;
}

struct ReportFlags {
  std::string metric;
  std::size_t top = 10;
  std::string out;
  std::vector<std::string> compare;
  bool summarize = false;
  bool issues = false;
  std::string prompts;
};

int run_report(const std::string& data, const ReportFlags& f, const GatewayFlags& gw_flags) {
  const Workspace w{data};
  Dataset ds = service::open_workspace_dataset(w);
  const fs::path index_file = w.subgroups_dir() / "index.json";
  if (!fs::exists(index_file)) throw ConfigError("no clustering found; run `vibe cluster` first");
  const json index = json::parse(detail::read_file(index_file));
  auto gw = gw_flags.make(ds);
  service::App app(std::move(ds), gw, w.root, app_options(f.prompts));
  const Dataset& d = app.dataset();
  const MetricDescriptor& desc = f.metric.empty() ? d.manifest().metric_descriptors.front() : d.metric(f.metric);

  std::vector<Subgroup> groups;
  for (const auto& row : index["clusters"]) {
    auto p = app.store().get(row["id"].get<std::string>());
    if (!p) throw DataError("subgroup listed in index but missing from store: " + row["id"].get<std::string>());
    groups.push_back(p->subgroup);
  }
  const auto ranked = rank_subgroups(groups, d, desc.name);
  const auto values = metric_vector(d, desc.name);
  double base = 0.0;
  for (double v : values) base += v;
  base /= static_cast<double>(values.size());

  json rows = json::array();
  std::ostringstream md;
  md << "# Subgroup report: " << d.name() << "\n\n"
     << "Metric `" << desc.name << "` (" << to_string(desc.direction) << "). Dataset mean " << fixed(base) << " over "
     << d.size() << " samples; " << groups.size() << " subgroups, worst first.\n\n"
     << "| Rank | Subgroup | Size | Mean " << desc.name << " | Representative | Summary | Top issue |\n"
     << "|---:|---|---:|---:|---|---|---|\n";
  for (std::size_t r = 0; r < std::min(f.top, ranked.size()); ++r) {
    const std::string& id = ranked[r].id;
    json summary = nullptr, top_issue = nullptr;
    if (f.summarize) app.summarize(id, json::object());
    if (f.issues && ranked[r].size < 2) {
      std::cerr << "note: " << id << ": too small for an issue split\n";
    } else if (f.issues) {
      try {
        app.issues(id, json{{"metric", desc.name}});
      } catch (const UniformPerformanceError& e) {
        std::cerr << "note: " << id << ": " << e.what() << '\n';
      }
    }
    const Subgroup s = app.store().get(id)->subgroup;
    if (s.cache.summary_text) summary = *s.cache.summary_text;
    if (s.cache.issues && !s.cache.issues->empty())
      top_issue = {{"text", s.cache.issues->front().text}, {"confidence", s.cache.issues->front().confidence}};
    const auto rep = s.empty() ? std::string() : representatives(s, d, 1).front();
    rows.push_back({{"rank", r + 1},
                    {"id", id},
                    {"size", ranked[r].size},
                    {"mean", ranked[r].mean},
                    {"representative", rep},
                    {"summary", summary},
                    {"top_issue", top_issue}});
    md << "| " << r + 1 << " | " << id << " | " << ranked[r].size << " | " << fixed(ranked[r].mean) << " | " << rep
       << " | " << (summary.is_null() ? "" : md_cell(summary.get<std::string>())) << " | "
       << (top_issue.is_null() ? ""
                               : md_cell(top_issue["text"].get<std::string>()) + " (" +
                                     fixed(top_issue["confidence"].get<double>(), 2) + ")")
       << " |\n";
  }

  json comparison = nullptr;
  if (!f.compare.empty()) {
    comparison = app.compare(json{{"subgroup_ids", f.compare}});
    md << "\n## Comparison: " << join(f.compare, " vs ") << "\n\n"
       << "Shared samples: " << comparison["shared_count"].get<std::size_t>() << " (excluded before statistics).\n\n"
       << "| Metric | Group | Mean | 95% CI |\n|---|---|---:|---|\n";
    for (const auto& [metric, m] : comparison["per_metric"].items()) {
      for (const auto& [group, ci] : m["interval_estimates"].items()) {
        md << "| " << metric << " | " << group << " | ";
        if (ci.is_null()) md << "unavailable | |\n";
        else
          md << fixed(ci["mean"].get<double>()) << " | [" << fixed(ci["lo"].get<double>()) << ", "
             << fixed(ci["hi"].get<double>()) << "] |\n";
      }
    }
    md << "\n";
    for (const auto& [metric, m] : comparison["per_metric"].items())
      for (const auto& v : m["verdict"]) md << "- " << metric << ": " << v["explanation"].get<std::string>() << "\n";
  }

  const json report{{"dataset", d.name()},
                    {"metric", desc.name},
                    {"direction", to_string(desc.direction)},
                    {"dataset_mean", base},
                    {"rows", rows},
                    {"comparison", comparison}};
  const fs::path out_dir = f.out.empty() ? w.root : fs::path(f.out);
  service::write_atomically(out_dir / "report.md", md.str());
  service::write_atomically(out_dir / "report.json", report.dump(2) + "\n");
  std::cout << md.str();
  return 0;
}

int run_serve(const std::string& data, const std::string& host, int port, const GatewayFlags& gw_flags,
              const std::string& prompts, std::size_t workers) {
  // Blocked before any thread starts so only the stopper sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const Workspace w{data};
  Dataset ds = service::open_workspace_dataset(w);
  auto gw = gw_flags.make(ds);
  auto opts = app_options(prompts);
  opts.workers = workers;
  service::App app(std::move(ds), gw, w.root, std::move(opts));
  service::Server server(app);
  if (!server.bind(host, port)) {
    std::cerr << "error: cannot bind " << host << ":" << port << " (port busy?)\n";
    return 1;
  }

  std::atomic<bool> signalled{false};
  std::thread stopper([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    server.stop();
  });
  std::cout << "serving " << app.dataset().name() << " (" << app.dataset().size() << " samples) on http://" << host
            << ":" << port << std::endl;
  server.listen_after_bind();
  if (!signalled) pthread_kill(stopper.native_handle(), SIGTERM);
  stopper.join();
  return 0;
}

int run_synth(const std::string& out, std::uint64_t seed, std::size_t samples) {
  PlantedSpec spec;
  spec.seed = seed;
  spec.samples = samples;
  const auto f = make_planted_fixture(spec);
  const fs::path dir(out);
  const auto manifest = write_dataset(dir, f.dataset);
  json providers = to_json(f.provider_config());
  providers.erase("stub");
  json pins = json::object();
  pins[f.spec.concept_text] = f.concept_direction;
  providers["stub"] = {{"pins", pins}, {"issues", f.provider_config().stub.issues}};
  service::write_atomically(dir / "providers.json", providers.dump(2) + "\n");
  service::write_atomically(dir / "planted_ids.json", json(f.planted_ids).dump() + "\n");
  std::cout << "wrote " << manifest.string() << " (" << f.dataset.size() << " samples, " << f.planted_ids.size()
            << " planted with \"" << f.spec.concept_text << "\") and " << (dir / "providers.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Semantic error analysis for vision model evaluation runs"};
  cli.require_subcommand(1);

  std::string manifest, out;
  auto* ingest = cli.add_subcommand("ingest", "Validate an evaluation run and copy it into a workspace");
  ingest->add_option("--manifest", manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out, "Workspace directory")->required();

  std::string data = default_data_dir();
  auto add_data = [&](CLI::App* cmd) {
    auto* o = cmd->add_option("--data", data, "Workspace directory (env VIBE_DATA_ROOT)");
    if (data.empty()) o->required();
  };

  GatewayFlags gw_flags;
  bool force = false;
  auto* precompute = cli.add_subcommand("precompute-captions", "Caption every sample that lacks a caption");
  add_data(precompute);
  gw_flags.add_to(precompute);
  precompute->add_flag("--force", force, "Recaption samples that already have captions");

  std::size_t k = 20;
  std::uint64_t seed = 42;
  std::string method = "kmeans", space = "full_dim", cluster_metric;
  double eps = 0.5;
  std::size_t min_pts = 5;
  auto* cluster_cmd = cli.add_subcommand("cluster", "Cluster the embedding space into subgroups");
  add_data(cluster_cmd);
  cluster_cmd->add_option("--k", k, "Number of k-means clusters")->capture_default_str();
  cluster_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  cluster_cmd->add_option("--method", method, "kmeans | dbscan")
      ->check(CLI::IsMember({"kmeans", "dbscan"}))
      ->capture_default_str();
  cluster_cmd->add_option("--space", space, "full_dim | projected_2d")
      ->check(CLI::IsMember({"full_dim", "projected_2d"}))
      ->capture_default_str();
  cluster_cmd->add_option("--eps", eps, "DBSCAN neighborhood radius")->capture_default_str();
  cluster_cmd->add_option("--min-pts", min_pts, "DBSCAN core point threshold")->capture_default_str();
  cluster_cmd->add_option("--metric", cluster_metric, "Metric used to rank clusters");

  ReportFlags rf;
  auto* report = cli.add_subcommand("report", "Render the ranked subgroup table as Markdown and JSON");
  add_data(report);
  report->add_option("--metric", rf.metric, "Metric to rank by (default: first declared)");
  report->add_option("--top", rf.top, "Rows to include")->capture_default_str();
  report->add_option("--out", rf.out, "Output directory for report.md and report.json (default: workspace)");
  report->add_option("--compare", rf.compare, "One or two subgroup ids to compare against the dataset")
      ->expected(1, 2);
  report->add_flag("--summarize", rf.summarize, "Generate missing summaries for listed subgroups");
  report->add_flag("--issues", rf.issues, "Propose candidate issues for listed subgroups");
  report->add_option("--prompts", rf.prompts, "Prompt template file")->check(CLI::ExistingFile);
  GatewayFlags report_gw;
  report_gw.add_to(report);

  std::string host = "127.0.0.1", prompts;
  int port = 8080;
  std::size_t workers = 2;
  auto* serve = cli.add_subcommand("serve", "Run the HTTP analysis service");
  add_data(serve);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->capture_default_str();
  serve->add_option("--prompts", prompts, "Prompt template file")->check(CLI::ExistingFile);
  serve->add_option("--workers", workers, "Background job workers")->capture_default_str();
  GatewayFlags serve_gw;
  serve_gw.add_to(serve);

  std::string synth_out;
  std::uint64_t synth_seed = 7;
  std::size_t synth_samples = 1000;
  auto* synth = cli.add_subcommand("synth", "Write a synthetic run with a planted error cause");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--samples", synth_samples, "Sample count")->capture_default_str();

  CLI11_PARSE(cli, argc, argv);

  try {
    if (*ingest) return run_ingest(manifest, out);
    if (*precompute) return run_precompute(data, gw_flags, force);
    if (*cluster_cmd) {
      json request{{"method", method}, {"k", k}, {"seed", seed}, {"space", space}, {"dbscan_eps", eps},
                   {"dbscan_min_pts", min_pts}};
      if (!cluster_metric.empty()) request["metric"] = cluster_metric;
      return run_cluster(data, request);
    }
    if (*report) return run_report(data, rf, report_gw);
    if (*serve) return run_serve(data, host, port, serve_gw, prompts, workers);
    if (*synth) return run_synth(synth_out, synth_seed, synth_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
