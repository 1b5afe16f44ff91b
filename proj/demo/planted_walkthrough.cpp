// Walks the analysis loop on the synthetic planted dataset: cluster, rank,
// summarize, propose issues, search for the top issue and compare.
//
//   ./vibe_planted_walkthrough [seed]

#include <cstdio>
#include <cstdlib>

#include "vibe/analysis.hpp"
#include "vibe/clustering.hpp"
#include "vibe/hypothesis.hpp"
#include "vibe/search.hpp"
#include "vibe/stats.hpp"
#include "vibe/synthetic.hpp"

using namespace vibe;

int main(int argc, char** argv) {
  PlantedSpec spec;
  if (argc > 1) spec.seed = std::strtoull(argv[1], nullptr, 10);
  const auto fixture = make_planted_fixture(spec);
  const Dataset& ds = fixture.dataset;
  auto gateway = Gateway::stub(ds.dim(), fixture.provider_config());
  std::printf("dataset: %zu samples, dim %zu, %zu planted (\"%s\")\n\n", ds.size(), ds.dim(),
              fixture.planted_ids.size(), spec.concept_text.c_str());

  ClusteringConfig config;
  config.k = 20;
  auto groups = cluster(ds, config);
  const auto ranked = rank_subgroups(groups, ds, "loss");
  std::printf("worst clusters by mean loss:\n");
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& r = ranked[i];
    std::size_t planted = 0;
    for (const auto& id : groups[r.position].members) planted += fixture.is_planted(id) ? 1 : 0;
    std::printf("  %zu. %-20s size %3zu  mean %.3f  planted %3zu\n", i + 1, r.id.c_str(), r.size, r.mean, planted);
  }

  Subgroup& worst = groups[ranked.front().position];
  const PromptBundle prompts;
  std::printf("\nsummary: %s\n", summarize_subgroup(worst, ds, *gateway, prompts, {}).c_str());

  const auto issues = propose_issues(worst, ds, "loss", *gateway, prompts);
  std::printf("\ncandidate issues (AUROC):\n");
  for (const auto& issue : issues) std::printf("  %.3f  %s\n", issue.confidence, issue.text.c_str());

  ConceptQuery query;
  query.text = issues.front().text;
  query.k = 100;
  const auto found = concept_search(ds, query, *gateway);
  std::size_t planted = 0;
  for (const auto& id : found.subgroup.members) planted += fixture.is_planted(id) ? 1 : 0;
  std::printf("\nsearch \"%s\" k=100: %zu planted samples retrieved\n", query.text.c_str(), planted);

  const std::vector<Subgroup> alone{worst};
  const std::vector<Subgroup> pair{worst, found.subgroup};
  const auto before = compare_subgroups(alone, ds);
  const auto after = compare_subgroups(pair, ds);
  const auto& v1 = verdict_for(before.metric("loss"), worst.id, "dataset");
  const auto& v2 = verdict_for(after.metric("loss"), worst.id, "dataset");
  std::printf("\nworst cluster vs dataset: %s\n", to_string(v1.verdict).c_str());
  std::printf("after removing search hits (%zu members left): %s\n", after.sizes[0].compared_count,
              to_string(v2.verdict).c_str());
  return 0;
}
