#pragma once

// Histograms, percentile-bootstrap confidence intervals of the mean, set
// overlap and CI-overlap significance for subgroup comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vibe/common.hpp"
#include "vibe/dataset.hpp"
#include "vibe/subgroup.hpp"

namespace vibe {

struct Histogram {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::pair<double, double> domain{0.0, 1.0};
  std::size_t out_of_domain = 0;
};

/// Uniform bins over [min, max]. The first bin is closed on both sides;
/// every other bin is (left, right], so a value on an interior edge lands
/// in the bin to its left. Values outside the domain (and NaN) are counted
/// in `out_of_domain` only.
inline Histogram histogram(std::span<const double> values, std::size_t bins, std::pair<double, double> domain) {
  if (bins < 1) throw InvalidArgument("histogram: bins must be >= 1");
  if (!(domain.first < domain.second)) throw InvalidArgument("histogram: domain min must be < max");
  Histogram h;
  h.domain = domain;
  h.bin_edges.resize(bins + 1);
  const double width = domain.second - domain.first;
  for (std::size_t i = 0; i <= bins; ++i)
    h.bin_edges[i] = domain.first + width * static_cast<double>(i) / static_cast<double>(bins);
  h.bin_edges.back() = domain.second;
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (!(v >= domain.first && v <= domain.second)) {
      ++h.out_of_domain;
      continue;
    }
    const auto it = std::lower_bound(h.bin_edges.begin() + 1, h.bin_edges.end(), v);
    ++h.counts[static_cast<std::size_t>(it - (h.bin_edges.begin() + 1))];
  }
  return h;
}

inline json to_json(const Histogram& h) {
  return json{{"bin_edges", h.bin_edges},
              {"counts", h.counts},
              {"domain", {h.domain.first, h.domain.second}},
              {"out_of_domain", h.out_of_domain}};
}

struct IntervalEstimate {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 42;

  bool operator==(const IntervalEstimate&) const = default;
};

inline json to_json(const IntervalEstimate& e) {
  return json{{"mean", e.mean}, {"lo", e.lo}, {"hi", e.hi},
              {"resamples", e.resamples}, {"alpha", e.alpha}, {"seed", e.seed}};
}

/// Linear-interpolation quantile of sorted data (the "type 7" definition).
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InvalidArgument("quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Percentile bootstrap interval for the mean. Resample indices come from
/// vibe::Rng (mt19937_64 + rejection sampling), so results are
/// reproducible bit for bit for a given seed.
inline IntervalEstimate bootstrap_mean_ci(std::span<const double> values, std::size_t resamples = 1000,
                                          double alpha = 0.05, std::uint64_t seed = 42) {
  if (values.empty()) throw InvalidArgument("bootstrap_mean_ci: empty input");
  if (resamples < 1) throw InvalidArgument("bootstrap_mean_ci: resamples must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("bootstrap_mean_ci: alpha must lie in (0, 1)");
  const std::size_t n = values.size();
  IntervalEstimate e;
  e.resamples = resamples;
  e.alpha = alpha;
  e.seed = seed;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(n);

  Rng rng(seed);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[static_cast<std::size_t>(rng.below(n))];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  e.lo = quantile_sorted(means, alpha / 2.0);
  e.hi = quantile_sorted(means, 1.0 - alpha / 2.0);
  return e;
}

inline IntervalEstimate bootstrap_mean_ci(const std::vector<double>& values, std::size_t resamples = 1000,
                                          double alpha = 0.05, std::uint64_t seed = 42) {
  return bootstrap_mean_ci(std::span<const double>(values), resamples, alpha, seed);
}

struct Overlap {
  std::vector<std::string> shared_ids;
  std::vector<std::string> only_1_ids;
  std::vector<std::string> only_2_ids;
};

/// Partition of s1 ∪ s2. Each list keeps the member order of its source.
inline Overlap overlap(const Subgroup& s1, const Subgroup& s2) {
  const std::unordered_set<std::string> in1(s1.members.begin(), s1.members.end());
  const std::unordered_set<std::string> in2(s2.members.begin(), s2.members.end());
  Overlap o;
  for (const auto& id : s1.members) (in2.count(id) ? o.shared_ids : o.only_1_ids).push_back(id);
  for (const auto& id : s2.members)
    if (!in1.count(id)) o.only_2_ids.push_back(id);
  return o;
}

enum class Verdict { Significant, Inconclusive };

inline std::string to_string(Verdict v) { return v == Verdict::Significant ? "significant" : "inconclusive"; }

struct SignificanceResult {
  Verdict verdict = Verdict::Inconclusive;
  std::string explanation;
};

/// Significant iff the two intervals are disjoint; touching endpoints
/// count as overlap.
inline SignificanceResult significance(const IntervalEstimate& a, const IntervalEstimate& b,
                                       const std::string& label_a = "first", const std::string& label_b = "second") {
  if (a.alpha != b.alpha) throw InvalidArgument("significance: alpha mismatch");
  const bool disjoint = a.hi < b.lo || b.hi < a.lo;
  SignificanceResult r;
  r.verdict = disjoint ? Verdict::Significant : Verdict::Inconclusive;
  const int level = static_cast<int>(std::lround((1.0 - a.alpha) * 100.0));
  std::ostringstream s;
  s.precision(4);
  s << "Mean of " << label_a << " is " << a.mean << " [" << a.lo << ", " << a.hi << "], mean of " << label_b
    << " is " << b.mean << " [" << b.lo << ", " << b.hi << "]. ";
  if (disjoint) {
    s << "The " << level << "% confidence intervals do not overlap: the difference in means is significant ("
      << label_a << " is " << (a.mean > b.mean ? "higher" : "lower") << ").";
  } else {
    s << "The " << level << "% confidence intervals overlap: the difference may be due to random variation.";
  }
  r.explanation = s.str();
  return r;
}

struct CompareOptions {
  bool exclude_shared = true;
  std::size_t bins = 20;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 42;
};

struct SubgroupSize {
  std::string id;
  std::size_t count = 0;
  double fraction = 0.0;
  std::size_t compared_count = 0;  // after shared-sample exclusion
  bool available = true;
};

struct PairVerdict {
  std::string first;
  std::string second;
  Verdict verdict = Verdict::Inconclusive;
  std::string explanation;
};

struct MetricComparison {
  std::pair<double, double> domain{0.0, 1.0};
  /// keyed by "dataset" or subgroup id; nullopt = statistics unavailable
  std::vector<std::pair<std::string, std::optional<Histogram>>> histograms;
  std::vector<std::pair<std::string, std::optional<IntervalEstimate>>> interval_estimates;
  std::vector<PairVerdict> verdict;
};

struct ComparisonReport {
  std::vector<std::string> subgroup_ids;
  std::size_t dataset_size = 0;
  std::vector<SubgroupSize> sizes;
  std::size_t shared_count = 0;
  bool exclude_shared = true;
  std::vector<std::pair<std::string, MetricComparison>> per_metric;

  const MetricComparison& metric(const std::string& name) const {
    for (const auto& [n, m] : per_metric)
      if (n == name) return m;
    throw NotFoundError("metric not in report: " + name);
  }
};

inline const std::optional<IntervalEstimate>& interval_for(const MetricComparison& m, const std::string& key) {
  for (const auto& [k, v] : m.interval_estimates)
    if (k == key) return v;
  throw NotFoundError("no interval for " + key);
}

inline const PairVerdict& verdict_for(const MetricComparison& m, const std::string& first, const std::string& second) {
  for (const auto& v : m.verdict)
    if (v.first == first && v.second == second) return v;
  throw NotFoundError("no verdict for " + first + " vs " + second);
}

/// Display domain of a metric: its declared display_range, else the
/// observed dataset range (widened by 0.5 each side when degenerate).
inline std::pair<double, double> display_domain(const Dataset& ds, const MetricDescriptor& m) {
  if (m.display_range) return *m.display_range;
  const auto values = metric_vector(ds, m.name);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (lo == values.end()) return {0.0, 1.0};
  if (*lo < *hi) return {*lo, *hi};
  return {*lo - 0.5, *hi + 0.5};
}

inline constexpr const char* kDatasetKey = "dataset";

/// Compares one or two subgroups with the whole dataset on every declared
/// metric. With exclude_shared, samples in both subgroups are dropped from
/// both before any statistic; the dataset baseline always uses all samples.
inline ComparisonReport compare_subgroups(std::span<const Subgroup> selection, const Dataset& ds,
                                          const CompareOptions& opts = {}) {
  if (selection.empty() || selection.size() > 2)
    throw InvalidArgument("compare_subgroups: select one or two subgroups");
  ComparisonReport r;
  r.exclude_shared = opts.exclude_shared;
  r.dataset_size = ds.size();

  std::vector<std::vector<std::string>> compared;
  for (const auto& s : selection) {
    r.subgroup_ids.push_back(s.id);
    compared.push_back(s.members);
  }
  if (selection.size() == 2) {
    const auto o = overlap(selection[0], selection[1]);
    r.shared_count = o.shared_ids.size();
    if (opts.exclude_shared) {
      compared[0] = o.only_1_ids;
      compared[1] = o.only_2_ids;
    }
  }
  for (std::size_t i = 0; i < selection.size(); ++i) {
    SubgroupSize sz;
    sz.id = selection[i].id;
    sz.count = selection[i].size();
    sz.fraction = ds.size() ? static_cast<double>(sz.count) / static_cast<double>(ds.size()) : 0.0;
    sz.compared_count = compared[i].size();
    sz.available = !compared[i].empty();
    r.sizes.push_back(sz);
  }

  for (const auto& desc : ds.manifest().metric_descriptors) {
    MetricComparison mc;
    mc.domain = display_domain(ds, desc);
    const auto all = metric_vector(ds, desc.name);
    mc.histograms.emplace_back(kDatasetKey, histogram(all, opts.bins, mc.domain));
    const auto base = bootstrap_mean_ci(all, opts.resamples, opts.alpha, opts.seed);
    mc.interval_estimates.emplace_back(kDatasetKey, base);

    std::vector<std::optional<IntervalEstimate>> cis;
    for (std::size_t i = 0; i < selection.size(); ++i) {
      if (compared[i].empty()) {
        mc.histograms.emplace_back(selection[i].id, std::nullopt);
        mc.interval_estimates.emplace_back(selection[i].id, std::nullopt);
        cis.emplace_back();
        continue;
      }
      std::vector<double> vals;
      vals.reserve(compared[i].size());
      for (const auto& id : compared[i]) vals.push_back(all[ds.index_of(id)]);
      mc.histograms.emplace_back(selection[i].id, histogram(vals, opts.bins, mc.domain));
      auto ci = bootstrap_mean_ci(vals, opts.resamples, opts.alpha, opts.seed);
      mc.interval_estimates.emplace_back(selection[i].id, ci);
      cis.emplace_back(ci);
    }
    for (std::size_t i = 0; i < selection.size(); ++i) {
      if (!cis[i]) continue;
      auto sig = significance(*cis[i], base, selection[i].id, "the dataset");
      mc.verdict.push_back({selection[i].id, kDatasetKey, sig.verdict, sig.explanation});
    }
    if (selection.size() == 2 && cis[0] && cis[1]) {
      auto sig = significance(*cis[0], *cis[1], selection[0].id, selection[1].id);
      mc.verdict.push_back({selection[0].id, selection[1].id, sig.verdict, sig.explanation});
    }
    r.per_metric.emplace_back(desc.name, std::move(mc));
  }
  return r;
}

inline json to_json(const ComparisonReport& r) {
  json sizes = json::array();
  for (const auto& s : r.sizes)
    sizes.push_back({{"id", s.id},
                     {"count", s.count},
                     {"fraction", s.fraction},
                     {"compared_count", s.compared_count},
                     {"available", s.available}});
  json per_metric = json::object();
  for (const auto& [name, m] : r.per_metric) {
    json hist = json::object(), ci = json::object(), verdicts = json::array();
    for (const auto& [k, h] : m.histograms) hist[k] = h ? to_json(*h) : json(nullptr);
    for (const auto& [k, e] : m.interval_estimates) ci[k] = e ? to_json(*e) : json(nullptr);
    for (const auto& v : m.verdict)
      verdicts.push_back({{"first", v.first},
                          {"second", v.second},
                          {"verdict", to_string(v.verdict)},
                          {"explanation", v.explanation}});
    per_metric[name] = {{"domain", {m.domain.first, m.domain.second}},
                        {"histograms", hist},
                        {"interval_estimates", ci},
                        {"verdict", verdicts}};
  }
  return json{{"subgroup_ids", r.subgroup_ids},
              {"dataset_size", r.dataset_size},
              {"sizes", sizes},
              {"shared_count", r.shared_count},
              {"exclude_shared", r.exclude_shared},
              {"per_metric", per_metric}};
}

}  // namespace vibe
