#pragma once

// Evaluation-run data model: metric descriptors, sample records, the
// embedding store, ingestion from a manifest and dataset validation.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vibe/common.hpp"

namespace vibe {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Direction { LowerIsBetter, HigherIsBetter };

inline std::string to_string(Direction d) {
  return d == Direction::LowerIsBetter ? "lower-is-better" : "higher-is-better";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "lower-is-better") return Direction::LowerIsBetter;
  if (s == "higher-is-better") return Direction::HigherIsBetter;
  throw DataError("unknown metric direction: " + s);
}

struct MetricDescriptor {
  std::string name;
  Direction direction = Direction::LowerIsBetter;
  std::optional<std::pair<double, double>> display_range;

  /// True when `a` is a worse value than `b` under this metric's direction.
  bool worse(double a, double b) const {
    return direction == Direction::LowerIsBetter ? a > b : a < b;
  }
};

struct SampleRecord {
  std::string id;
  std::string input_asset;
  std::vector<std::string> truth_assets;
  std::vector<std::string> prediction_assets;
  std::map<std::string, double> metrics;
  std::optional<std::string> caption;
};

/// Row-major N x dim matrix of embedding vectors with cached Euclidean norms.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw DataError("embedding dim must be positive");
    if (values_.size() % dim_ != 0) throw DataError("embedding buffer is not a multiple of dim");
    const std::size_t n = values_.size() / dim_;
    norms_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (double v : row(i)) s += v * v;
      norms_[i] = std::sqrt(s);
    }
  }

  static EmbeddingStore from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DataError("no embedding rows");
    const std::size_t dim = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * dim);
    for (const auto& r : rows) {
      if (r.size() != dim) throw DataError("embedding rows have unequal dims");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return EmbeddingStore(dim, std::move(flat));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  double norm(std::size_t i) const { return norms_[i]; }
  std::span<const double> norms() const noexcept { return norms_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::vector<double> norms_;
};

struct DatasetManifest {
  std::string name;
  fs::path asset_root;
  std::vector<MetricDescriptor> metric_descriptors;
  std::size_t sample_count = 0;
  std::size_t embedding_dim = 512;
  std::string samples_file = "samples.jsonl";
  std::string embeddings_file = "embeddings.bin";
};

/// An ingested evaluation run. Immutable once constructed; use the
/// `with_*` helpers to derive a modified copy.
class Dataset {
 public:
  Dataset() = default;
  /// Builds a dataset without checking invariants (see validate_dataset).
  Dataset(DatasetManifest manifest, std::vector<SampleRecord> records, EmbeddingStore store)
      : manifest_(std::move(manifest)), records_(std::move(records)), store_(std::move(store)) {
    manifest_.sample_count = records_.size();
    for (std::size_t i = 0; i < records_.size(); ++i) index_.emplace(records_[i].id, i);
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const std::string& name() const noexcept { return manifest_.name; }
  std::span<const SampleRecord> records() const noexcept { return records_; }
  const SampleRecord& record(std::size_t i) const { return records_.at(i); }
  const EmbeddingStore& store() const noexcept { return store_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t dim() const noexcept { return store_.dim(); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown sample id: " + id);
    return it->second;
  }

  std::vector<std::size_t> indices_of(std::span<const std::string> ids) const {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(index_of(id));
    return out;
  }

  const MetricDescriptor& metric(const std::string& name) const {
    for (const auto& m : manifest_.metric_descriptors)
      if (m.name == name) return m;
    throw NotFoundError("unknown metric: " + name);
  }

  bool has_metric(const std::string& name) const {
    return std::any_of(manifest_.metric_descriptors.begin(), manifest_.metric_descriptors.end(),
                       [&](const MetricDescriptor& m) { return m.name == name; });
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.id);
    return out;
  }

  /// Copy of this dataset with captions replaced where `captions` has an entry.
  Dataset with_captions(const std::map<std::string, std::string>& captions) const {
    auto records = records_;
    for (auto& r : records) {
      auto it = captions.find(r.id);
      if (it != captions.end()) r.caption = it->second;
    }
    return Dataset(manifest_, std::move(records), store_);
  }

  fs::path resolve_asset(const std::string& relative) const { return manifest_.asset_root / relative; }

 private:
  DatasetManifest manifest_;
  std::vector<SampleRecord> records_;
  EmbeddingStore store_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const MetricDescriptor& m) {
  json j{{"name", m.name}, {"direction", to_string(m.direction)}};
  if (m.display_range) j["display_range"] = {m.display_range->first, m.display_range->second};
  return j;
}

inline MetricDescriptor metric_from_json(const json& j) {
  MetricDescriptor m;
  m.name = j.at("name").get<std::string>();
  m.direction = parse_direction(j.value("direction", std::string("lower-is-better")));
  if (j.contains("display_range") && !j["display_range"].is_null()) {
    const auto& r = j["display_range"];
    if (!r.is_array() || r.size() != 2) throw DataError("display_range must be [min, max]: " + m.name);
    m.display_range = std::make_pair(r[0].get<double>(), r[1].get<double>());
  }
  return m;
}

inline json to_json(const SampleRecord& r) {
  json metrics = json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = v;
  json j{{"id", r.id},
         {"input_asset", r.input_asset},
         {"truth_assets", r.truth_assets},
         {"prediction_assets", r.prediction_assets},
         {"metrics", metrics}};
  j["caption"] = r.caption ? json(*r.caption) : json(nullptr);
  return j;
}

inline SampleRecord sample_from_json(const json& j) {
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.input_asset = j.value("input_asset", std::string{});
  if (j.contains("truth_assets")) r.truth_assets = j["truth_assets"].get<std::vector<std::string>>();
  if (j.contains("prediction_assets"))
    r.prediction_assets = j["prediction_assets"].get<std::vector<std::string>>();
  if (j.contains("metrics")) {
    for (const auto& [k, v] : j["metrics"].items()) {
      // Non-finite values arrive as null from JSON writers; keep them as NaN
      // so validation reports them with the sample id.
      r.metrics[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  }
  if (j.contains("caption") && j["caption"].is_string()) r.caption = j["caption"].get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Binary embedding file: u32 N, u32 dim (little-endian), then N*dim f32 LE.

namespace detail {

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u32_le(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string(), path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

struct RawEmbeddings {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;
};

inline RawEmbeddings read_embeddings(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 8) throw DataError("embedding file too short: " + path.string(), path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawEmbeddings raw;
  raw.rows = detail::load_u32_le(p);
  raw.dim = detail::load_u32_le(p + 4);
  const std::size_t available = (bytes.size() - 8) / 4;
  if (raw.dim == 0) throw DataError("embedding file declares dim 0", path.string());
  if (available != raw.rows * raw.dim)
    throw DataError("embedding file holds " + std::to_string(available) + " floats, header declares " +
                        std::to_string(raw.rows) + " x " + std::to_string(raw.dim),
                    path.string());
  raw.values.resize(available);
  for (std::size_t i = 0; i < available; ++i) {
    const std::uint32_t bits = detail::load_u32_le(p + 8 + 4 * i);
    raw.values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return raw;
}

inline void write_embeddings(const fs::path& path, const EmbeddingStore& store) {
  std::string bytes(8 + 4 * store.values().size(), '\0');
  auto* p = reinterpret_cast<unsigned char*>(bytes.data());
  detail::store_u32_le(p, static_cast<std::uint32_t>(store.size()));
  detail::store_u32_le(p + 4, static_cast<std::uint32_t>(store.dim()));
  std::size_t i = 0;
  for (double v : store.values())
    detail::store_u32_le(p + 8 + 4 * i++, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string(), path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_samples(const fs::path& path, std::span<const SampleRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string(), path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline json manifest_to_json(const DatasetManifest& m) {
  json metrics = json::array();
  for (const auto& d : m.metric_descriptors) metrics.push_back(to_json(d));
  return json{{"name", m.name},
              {"asset_root", m.asset_root.string()},
              {"embedding_dim", m.embedding_dim},
              {"sample_count", m.sample_count},
              {"metrics", metrics},
              {"samples_file", m.samples_file},
              {"embeddings_file", m.embeddings_file}};
}

/// Writes manifest, samples and embeddings for `ds` into `dir`. The manifest
/// uses asset_root "." so the directory is self-contained.
inline fs::path write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  DatasetManifest m = ds.manifest();
  m.asset_root = ".";
  m.embedding_dim = ds.dim();
  write_samples(dir / m.samples_file, ds.records());
  write_embeddings(dir / m.embeddings_file, ds.store());
  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream(manifest_path, std::ios::trunc) << manifest_to_json(m).dump(2) << '\n';
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Ingestion

/// Loads and checks a dataset. Every invariant of the data model is enforced;
/// violations throw DataError naming the offending sample id.
inline Dataset ingest_manifest(const fs::path& manifest_path) {
  json mj;
  try {
    mj = json::parse(detail::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what(), manifest_path.string());
  }

  DatasetManifest m;
  try {
    m.name = mj.at("name").get<std::string>();
    fs::path root = mj.value("asset_root", std::string("."));
    m.asset_root = root.is_absolute() ? root : manifest_path.parent_path() / root;
    m.embedding_dim = mj.value("embedding_dim", std::size_t{512});
    m.samples_file = mj.at("samples_file").get<std::string>();
    m.embeddings_file = mj.at("embeddings_file").get<std::string>();
    for (const auto& d : mj.at("metrics")) m.metric_descriptors.push_back(metric_from_json(d));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what(), manifest_path.string());
  }
  std::optional<std::size_t> declared_count;
  if (mj.contains("sample_count")) declared_count = mj["sample_count"].get<std::size_t>();

  std::map<std::string, const MetricDescriptor*> declared;
  for (const auto& d : m.metric_descriptors) {
    if (!declared.emplace(d.name, &d).second) throw DataError("duplicate metric descriptor: " + d.name, d.name);
    if (d.display_range && !(d.display_range->first < d.display_range->second))
      throw DataError("display_range min must be < max: " + d.name, d.name);
  }

  // Samples.
  std::vector<SampleRecord> records;
  {
    const fs::path samples_path = m.asset_root / m.samples_file;
    std::istringstream lines(detail::read_file(samples_path));
    std::string line;
    std::size_t lineno = 0;
    std::unordered_map<std::string, std::size_t> seen;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      SampleRecord r;
      try {
        r = sample_from_json(json::parse(line));
      } catch (const json::exception& e) {
        throw DataError("malformed sample at line " + std::to_string(lineno) + ": " + e.what());
      }
      if (r.id.empty()) throw DataError("empty sample id at line " + std::to_string(lineno));
      if (!seen.emplace(r.id, records.size()).second) throw DataError("duplicate id: " + r.id, r.id);
      for (const auto& [name, value] : r.metrics) {
        if (!declared.count(name)) throw DataError("undeclared metric '" + name + "': " + r.id, r.id);
        if (!std::isfinite(value)) throw DataError("non-finite metric '" + name + "': " + r.id, r.id);
      }
      for (const auto& d : m.metric_descriptors)
        if (!r.metrics.count(d.name)) throw DataError("missing metric '" + d.name + "': " + r.id, r.id);
      if (!r.truth_assets.empty() && !r.prediction_assets.empty() &&
          r.truth_assets.size() != r.prediction_assets.size())
        throw DataError("truth/prediction asset count mismatch: " + r.id, r.id);
      records.push_back(std::move(r));
    }
  }

  // Embeddings.
  RawEmbeddings raw = read_embeddings(m.asset_root / m.embeddings_file);
  if (raw.dim != m.embedding_dim)
    throw DataError("dimension mismatch: manifest declares " + std::to_string(m.embedding_dim) +
                    ", embedding file has " + std::to_string(raw.dim));
  if (declared_count && *declared_count != records.size())
    throw DataError("count mismatch: manifest declares " + std::to_string(*declared_count) + " samples, " +
                    std::to_string(records.size()) + " records found");
  if (raw.rows != records.size())
    throw DataError("count mismatch: " + std::to_string(records.size()) + " records, " +
                    std::to_string(raw.rows) + " embedding rows");

  EmbeddingStore store(raw.dim, std::move(raw.values));
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double v : store.row(i))
      if (!std::isfinite(v)) throw DataError("non-finite embedding: " + records[i].id, records[i].id);
    if (!(store.norm(i) > 0.0)) throw DataError("zero-norm embedding: " + records[i].id, records[i].id);
  }
  return Dataset(std::move(m), std::move(records), std::move(store));
}

// ---------------------------------------------------------------------------
// Validation

enum class Severity { Error, Info };

struct Finding {
  std::string check;
  bool passed = true;
  Severity severity = Severity::Error;
  std::string message;
  std::vector<std::string> sample_ids;
};

struct ValidationReport {
  std::vector<Finding> findings;

  bool ok() const {
    return std::all_of(findings.begin(), findings.end(),
                       [](const Finding& f) { return f.passed || f.severity == Severity::Info; });
  }

  const Finding* find(const std::string& check) const {
    for (const auto& f : findings)
      if (f.check == check) return &f;
    return nullptr;
  }
};

/// Runs every data-model check and reports findings. Never throws.
inline ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport report;
  auto add = [&](std::string check, std::vector<std::string> bad, std::string what) {
    Finding f;
    f.check = std::move(check);
    f.passed = bad.empty();
    f.message = f.passed ? "ok" : what + " (" + std::to_string(bad.size()) + " samples)";
    f.sample_ids = std::move(bad);
    report.findings.push_back(std::move(f));
  };

  std::vector<std::string> empty_ids, dup_ids, bad_metric_name, nonfinite_metric, missing_metric, asset_mismatch;
  std::map<std::string, int> counts;
  for (const auto& r : ds.records()) {
    if (r.id.empty()) empty_ids.push_back(r.id);
    if (++counts[r.id] == 2) dup_ids.push_back(r.id);
    for (const auto& [name, value] : r.metrics) {
      if (!ds.has_metric(name)) bad_metric_name.push_back(r.id);
      if (!std::isfinite(value)) nonfinite_metric.push_back(r.id);
    }
    for (const auto& d : ds.manifest().metric_descriptors)
      if (!r.metrics.count(d.name)) missing_metric.push_back(r.id);
    if (!r.truth_assets.empty() && !r.prediction_assets.empty() &&
        r.truth_assets.size() != r.prediction_assets.size())
      asset_mismatch.push_back(r.id);
  }
  add("nonempty id", empty_ids, "empty sample id");
  add("unique id", dup_ids, "duplicate id");
  add("declared metric", bad_metric_name, "undeclared metric");
  add("finite metric", nonfinite_metric, "non-finite metric");
  add("complete metrics", missing_metric, "missing metric value");
  add("asset pairs", asset_mismatch, "truth/prediction asset count mismatch");

  {
    std::vector<std::string> bad;
    std::set<std::string> names;
    for (const auto& d : ds.manifest().metric_descriptors) {
      if (!names.insert(d.name).second) bad.push_back(d.name);
      if (d.display_range && !(d.display_range->first < d.display_range->second)) bad.push_back(d.name);
    }
    add("metric descriptors", bad, "duplicate metric or invalid display_range");
  }

  const auto& store = ds.store();
  {
    std::vector<std::string> bad;
    if (store.size() != ds.size()) bad.push_back("<rows=" + std::to_string(store.size()) + ">");
    add("row count", bad, "embedding rows do not match sample count");
  }
  std::vector<std::string> nonfinite_emb, zero_emb;
  for (std::size_t i = 0; i < std::min(store.size(), ds.size()); ++i) {
    bool finite = true;
    for (double v : store.row(i)) finite = finite && std::isfinite(v);
    if (!finite) nonfinite_emb.push_back(ds.record(i).id);
    else if (!(store.norm(i) > 0.0)) zero_emb.push_back(ds.record(i).id);
  }
  add("finite embedding", nonfinite_emb, "non-finite embedding");
  add("nonzero embedding", zero_emb, "zero-norm embedding");

  {
    std::vector<std::string> missing;
    for (const auto& r : ds.records())
      if (!r.caption || r.caption->empty()) missing.push_back(r.id);
    Finding f;
    f.check = "caption coverage";
    f.severity = Severity::Info;
    f.passed = missing.empty();
    if (f.passed) {
      f.message = "all samples captioned";
    } else {
      const double pct = ds.size() ? 100.0 * static_cast<double>(missing.size()) / ds.size() : 0.0;
      std::ostringstream msg;
      msg << "captions missing for " << std::round(pct * 10.0) / 10.0 << "% of samples";
      f.message = msg.str();
    }
    f.sample_ids = std::move(missing);
    report.findings.push_back(std::move(f));
  }
  return report;
}

/// Fraction of samples carrying a nonempty caption.
inline double caption_coverage(const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t n = 0;
  for (const auto& r : ds.records()) n += (r.caption && !r.caption->empty()) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(ds.size());
}

/// Values of one metric in sample order.
inline std::vector<double> metric_vector(const Dataset& ds, const std::string& metric_name) {
  ds.metric(metric_name);  // throws on unknown name
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records()) {
    auto it = r.metrics.find(metric_name);
    out.push_back(it == r.metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
  }
  return out;
}

/// Componentwise mean of equal-length vectors (e.g. one embedding per view
/// of a multi-view sample).
template <typename Range>
std::vector<double> aggregate_embedding(const Range& vectors) {
  if (std::begin(vectors) == std::end(vectors)) throw InvalidArgument("aggregate_embedding: empty list");
  const std::size_t dim = std::size(*std::begin(vectors));
  std::vector<double> sum(dim, 0.0);
  std::size_t count = 0;
  for (const auto& v : vectors) {
    if (std::size(v) != dim) throw InvalidArgument("aggregate_embedding: dim mismatch");
    std::size_t k = 0;
    for (const auto& x : v) sum[k++] += static_cast<double>(x);
    ++count;
  }
  for (double& s : sum) s /= static_cast<double>(count);
  return sum;
}

inline std::vector<double> aggregate_embedding(std::initializer_list<std::vector<double>> vectors) {
  return aggregate_embedding(std::vector<std::vector<double>>(vectors));
}

}  // namespace vibe
