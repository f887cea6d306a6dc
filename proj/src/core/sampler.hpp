#ifndef PROTORET_CORE_SAMPLER_HPP
#define PROTORET_CORE_SAMPLER_HPP

#include <string>
#include <vector>

#include "core/corpus.hpp"
#include "core/rng.hpp"

namespace protoret {

/// Episode configuration. Defaults: 10-way 3-shot with 2 queries,
/// 4 tasks per episode, 100 episodes.
struct EpisodeSpec {
  int n_way = 10;
  int n_shot = 3;
  int n_query = 2;
  int tasks_per_episode = 4;
  int episodes = 100;
};

void validate_spec(const EpisodeSpec& spec);

/// One K-way N-shot task: per class, N support rows and Q query rows,
/// disjoint, all drawn from that class's members.
struct FewShotTask {
  std::vector<std::string> classes;               // K, pairwise distinct
  std::vector<std::vector<std::size_t>> support;  // K×N corpus rows
  std::vector<std::vector<std::size_t>> query;    // K×Q corpus rows
};

struct Episode {
  std::vector<FewShotTask> tasks;
};

/// Classes with at least n_shot + n_query members, lexicographic order.
std::vector<std::string> eligible_classes(const ClassIndex& index,
                                          const EpisodeSpec& spec);

/// Positions into index.classes instead of names; used by the samplers.
std::vector<std::size_t> eligible_class_positions(const ClassIndex& index,
                                                  const EpisodeSpec& spec);

/// Draws K classes uniformly without replacement from the eligible classes,
/// then per class N+Q distinct rows uniformly without replacement; the first
/// N become support, the remaining Q query. Throws InfeasibleError when
/// fewer than K classes are eligible.
FewShotTask sample_task(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec);
FewShotTask sample_task(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec,
                        std::span<const std::size_t> eligible);

/// tasks_per_episode draws of sample_task on the same generator.
Episode sample_episode(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec);
Episode sample_episode(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec,
                       std::span<const std::size_t> eligible);

} // namespace protoret

#endif
