#include "core/sampler.hpp"

#include <stdexcept>

#include "core/error.hpp"

namespace protoret {

void validate_spec(const EpisodeSpec& spec) {
  if (spec.n_way < 2) throw std::invalid_argument("n_way must be >= 2");
  if (spec.n_shot < 1) throw std::invalid_argument("n_shot must be >= 1");
  if (spec.n_query < 1) throw std::invalid_argument("n_query must be >= 1");
  if (spec.tasks_per_episode < 1)
    throw std::invalid_argument("tasks_per_episode must be >= 1");
  if (spec.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
}

std::vector<std::size_t> eligible_class_positions(const ClassIndex& index,
                                                  const EpisodeSpec& spec) {
  validate_spec(spec);
  const auto needed =
      static_cast<std::size_t>(spec.n_shot) + static_cast<std::size_t>(spec.n_query);
  std::vector<std::size_t> positions;
  for (std::size_t c = 0; c < index.num_classes(); ++c)
    if (index.counts[c] >= needed) positions.push_back(c);
  return positions;
}

std::vector<std::string> eligible_classes(const ClassIndex& index,
                                          const EpisodeSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t pos : eligible_class_positions(index, spec))
    names.push_back(index.classes[pos]);
  return names;
}

FewShotTask sample_task(Rng& rng, const ClassIndex& index,
                        const EpisodeSpec& spec) {
  const auto eligible = eligible_class_positions(index, spec);
  return sample_task(rng, index, spec, eligible);
}

FewShotTask sample_task(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec,
                        std::span<const std::size_t> eligible) {
  validate_spec(spec);
  const auto k = static_cast<std::size_t>(spec.n_way);
  const auto n_shot = static_cast<std::size_t>(spec.n_shot);
  const auto n_query = static_cast<std::size_t>(spec.n_query);
  const std::size_t needed = n_shot + n_query;

  if (eligible.size() < k)
    throw InfeasibleError(
        "episodic sampling infeasible: n_way=" + std::to_string(spec.n_way) +
        " but only " + std::to_string(eligible.size()) +
        " classes have at least n_shot+n_query=" + std::to_string(needed) +
        " samples");

  std::vector<std::size_t> pool(eligible.begin(), eligible.end());
  rng.partial_shuffle(pool, k);

  FewShotTask task;
  task.classes.reserve(k);
  task.support.reserve(k);
  task.query.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t cls = pool[i];
    task.classes.push_back(index.classes[cls]);

    std::vector<std::size_t> rows = index.members[cls];
    rng.partial_shuffle(rows, needed);
    task.support.emplace_back(rows.begin(), rows.begin() + n_shot);
    task.query.emplace_back(rows.begin() + n_shot, rows.begin() + needed);
  }
  return task;
}

Episode sample_episode(Rng& rng, const ClassIndex& index,
                       const EpisodeSpec& spec) {
  const auto eligible = eligible_class_positions(index, spec);
  return sample_episode(rng, index, spec, eligible);
}

Episode sample_episode(Rng& rng, const ClassIndex& index, const EpisodeSpec& spec,
                       std::span<const std::size_t> eligible) {
  Episode episode;
  episode.tasks.reserve(static_cast<std::size_t>(spec.tasks_per_episode));
  for (int t = 0; t < spec.tasks_per_episode; ++t)
    episode.tasks.push_back(sample_task(rng, index, spec, eligible));
  return episode;
}

} // namespace protoret
