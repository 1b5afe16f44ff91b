#pragma once

// Test fixtures: small hand-built datasets, labeled Gaussian blobs and
// temporary directories.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vibe/common.hpp"
#include "vibe/dataset.hpp"

namespace vibe::testing {

inline std::string sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "s" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

/// Builds a dataset from explicit rows; metrics are given per metric name.
inline Dataset make_dataset(const std::vector<std::vector<double>>& rows,
                            const std::vector<std::pair<MetricDescriptor, std::vector<double>>>& metrics = {},
                            const std::vector<std::optional<std::string>>& captions = {}) {
  DatasetManifest m;
  m.name = "fixture";
  m.asset_root = ".";
  m.embedding_dim = rows.empty() ? 0 : rows.front().size();
  std::vector<SampleRecord> records(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    records[i].id = sample_id(i);
    records[i].input_asset = "img/" + records[i].id + ".png";
    if (i < captions.size()) records[i].caption = captions[i];
  }
  for (const auto& [desc, values] : metrics) {
    m.metric_descriptors.push_back(desc);
    for (std::size_t i = 0; i < rows.size(); ++i) records[i].metrics[desc.name] = values.at(i);
  }
  return Dataset(std::move(m), std::move(records), EmbeddingStore::from_rows(rows));
}

inline MetricDescriptor lower_better(std::string name) {
  return MetricDescriptor{std::move(name), Direction::LowerIsBetter, std::nullopt};
}

inline MetricDescriptor higher_better(std::string name) {
  return MetricDescriptor{std::move(name), Direction::HigherIsBetter, std::nullopt};
}

inline std::vector<std::vector<double>> random_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
  for (auto& r : rows)
    for (auto& x : r) x = rng.normal();
  return rows;
}

struct Blobs {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
};

/// Two isotropic Gaussian blobs (sigma 1) whose centers are `separation`
/// sigmas apart.
inline Blobs two_blobs(std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    std::vector<double> r(dim);
    for (auto& x : r) x = rng.normal();
    r[0] += label == 0 ? -separation / 2.0 : separation / 2.0;
    b.rows.push_back(std::move(r));
    b.labels.push_back(label);
  }
  return b;
}

/// Rand index between two labelings.
template <typename A, typename B>
double rand_index(const std::vector<A>& x, const std::vector<B>& y) {
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      agree += ((x[i] == x[j]) == (y[i] == y[j])) ? 1 : 0;
      ++total;
    }
  return total ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vibe-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

}  // namespace vibe::testing
