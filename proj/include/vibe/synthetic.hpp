#pragma once

// Synthetic evaluation runs with a planted aggressor: topic clusters in
// embedding space, a concept direction that a subset of samples is pushed
// toward, and a metric penalty on exactly that subset. Used for end-to-end
// checks and demos where the ground truth must be known.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vibe/common.hpp"
#include "vibe/dataset.hpp"
#include "vibe/gateway.hpp"

namespace vibe {

struct PlantedSpec {
  std::size_t samples = 1000;
  std::size_t dim = 64;
  std::size_t topics = 10;
  std::size_t planted = 100;
  /// Samples drawn from a broad background distribution instead of a topic.
  std::size_t background = 0;
  double center_scale = 4.0;
  double topic_noise = 0.5;
  double background_scale = 1.0;
  /// Length of the offset along the concept direction.
  double concept_strength = 6.0;
  double planted_noise = 0.3;
  /// Unpenalized samples in the planted region with more off-concept
  /// variation: they cluster with the planted samples but align less with
  /// the concept direction.
  std::size_t decoys = 20;
  double decoy_noise = 1.2;
  /// Fraction of its topic center a planted or decoy sample loses.
  double topic_pull = 0.8;
  double penalty = 0.5;
  double base_loss = 0.3;
  double loss_sd = 0.2;
  std::uint64_t seed = 7;
  std::string concept_text = "foggy weather";
  std::vector<std::string> distractors = {"dark lighting",     "cluttered background", "small object",
                                          "motion blur",       "unusual viewpoint",    "reflective surface",
                                          "partial occlusion", "low contrast",         "thin structures"};
};

struct PlantedFixture {
  Dataset dataset;
  std::vector<std::string> planted_ids;
  std::vector<double> concept_direction;
  PlantedSpec spec;

  bool is_planted(const std::string& id) const {
    return std::binary_search(planted_ids.begin(), planted_ids.end(), id);
  }

  /// Stub configuration: the concept text is pinned to the concept direction
  /// and the issue list holds the concept among the distractors.
  ProviderConfig provider_config() const {
    ProviderConfig c;
    c.stub.pins[spec.concept_text] = concept_direction;
    c.stub.issues = spec.distractors;
    c.stub.issues.insert(c.stub.issues.begin() + static_cast<std::ptrdiff_t>(c.stub.issues.size() / 2),
                         spec.concept_text);
    return c;
  }
};

namespace detail {

inline std::vector<double> random_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  for (double& x : v) x /= std::sqrt(n2);
  return v;
}

/// Removes from v its components along each (not necessarily orthogonal)
/// vector in `basis` by Gram-Schmidt, then renormalizes.
inline std::vector<double> orthogonal_direction(std::vector<double> v, const std::vector<std::vector<double>>& basis) {
  std::vector<std::vector<double>> q;
  for (auto b : basis) {
    for (const auto& e : q) {
      double d = 0.0;
      for (std::size_t i = 0; i < b.size(); ++i) d += b[i] * e[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= d * e[i];
    }
    double n2 = 0.0;
    for (double x : b) n2 += x * x;
    if (n2 < 1e-24) continue;
    for (double& x : b) x /= std::sqrt(n2);
    q.push_back(std::move(b));
  }
  for (const auto& e : q) {
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * e[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * e[i];
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  for (double& x : v) x /= std::sqrt(n2);
  return v;
}

inline std::string padded_id(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return "s" + std::string(s.size() < width ? width - s.size() : 0, '0') + s;
}

}  // namespace detail

/// Builds the fixture. Planted samples are chosen among topic samples only,
/// so the background samples are never penalized.
inline PlantedFixture make_planted_fixture(const PlantedSpec& spec = {}) {
  if (spec.topics < 1 || spec.dim < spec.topics + 1) throw InvalidArgument("planted fixture: need dim > topics");
  if (spec.planted + spec.decoys + spec.background > spec.samples)
    throw InvalidArgument("planted fixture: too many special samples");
  Rng rng(spec.seed);
  std::vector<std::vector<double>> centers;
  for (std::size_t t = 0; t < spec.topics; ++t) {
    auto c = detail::random_direction(rng, spec.dim);
    for (double& x : c) x *= spec.center_scale;
    centers.push_back(std::move(c));
  }
  const auto concept_dir = detail::orthogonal_direction(detail::random_direction(rng, spec.dim), centers);

  const std::size_t n = spec.samples;
  const std::size_t topical = n - spec.background;
  std::vector<std::size_t> order(topical);
  for (std::size_t i = 0; i < topical; ++i) order[i] = i;
  for (std::size_t i = topical; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<bool> planted(n, false), decoy(n, false);
  for (std::size_t i = 0; i < spec.planted; ++i) planted[order[i]] = true;
  for (std::size_t i = spec.planted; i < spec.planted + spec.decoys; ++i) decoy[order[i]] = true;

  const std::size_t width = std::max<std::size_t>(4, std::to_string(n - 1).size());
  std::vector<std::vector<double>> rows(n, std::vector<double>(spec.dim));
  std::vector<SampleRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    auto& rec = records[i];
    rec.id = detail::padded_id(i, width);
    rec.input_asset = "inputs/" + rec.id + ".png";
    rec.truth_assets = {"truth/" + rec.id + ".png"};
    rec.prediction_assets = {"pred/" + rec.id + ".png"};
    std::string caption;
    double loss = spec.base_loss + spec.loss_sd * rng.normal();
    if (i >= topical) {
      for (double& x : r) x = spec.background_scale * rng.normal();
      caption = "an assorted scene";
    } else {
      const std::size_t t = i % spec.topics;
      caption = "a scene of topic " + std::to_string(t);
      if (planted[i] || decoy[i]) {
        const double noise = planted[i] ? spec.planted_noise : spec.decoy_noise;
        for (std::size_t d = 0; d < spec.dim; ++d)
          r[d] = (1.0 - spec.topic_pull) * centers[t][d] + spec.concept_strength * concept_dir[d] +
                 noise * rng.normal();
        caption += planted[i] ? " in " + spec.concept_text : " in light haze";
        if (planted[i]) loss += spec.penalty;
      } else {
        for (std::size_t d = 0; d < spec.dim; ++d) r[d] = centers[t][d] + spec.topic_noise * rng.normal();
      }
    }
    rec.metrics["loss"] = loss;
    rec.metrics["accuracy"] = std::clamp(0.8 + 0.1 * rng.normal(), 0.0, 1.0);
    rec.caption = caption;
  }

  DatasetManifest m;
  m.name = "planted";
  m.asset_root = ".";
  m.embedding_dim = spec.dim;
  m.metric_descriptors = {MetricDescriptor{"loss", Direction::LowerIsBetter, std::nullopt},
                          MetricDescriptor{"accuracy", Direction::HigherIsBetter, std::pair{0.0, 1.0}}};
  PlantedFixture f;
  f.dataset = Dataset(std::move(m), std::move(records), EmbeddingStore::from_rows(rows));
  for (std::size_t i = 0; i < n; ++i)
    if (planted[i]) f.planted_ids.push_back(f.dataset.record(i).id);
  std::sort(f.planted_ids.begin(), f.planted_ids.end());
  f.concept_direction = concept_dir;
  f.spec = spec;
  return f;
}

}  // namespace vibe
