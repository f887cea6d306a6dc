#ifndef PROTORET_CORE_SYNTH_HPP
#define PROTORET_CORE_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "core/corpus.hpp"

namespace protoret {

/// Recipe for a synthetic long-tailed corpus with known class structure.
struct SynthSpec {
  int n_classes = 20;
  int dim = 512;
  double zipf_s = 1.0;    // tail exponent; 0 = flat
  int count_min = 5;
  int count_max = 60;
  double noise_sigma = 0.1;
  std::uint64_t seed = 42;
};

/// Throws std::invalid_argument on out-of-range fields.
void validate_spec(const SynthSpec& spec);

/// counts[k] = clamp(round(count_max / (k+1)^zipf_s), count_min, count_max).
/// Non-increasing in k.
std::vector<int> zipf_counts(int n_classes, double zipf_s, int count_min,
                             int count_max);

struct SynthResult {
  EmbeddingCorpus corpus;
  Matrix class_means; // n_classes × dim, rows on the unit sphere
};

/// Class means drawn uniformly on the unit sphere (normalized Gaussian draws),
/// samples = mean + N(0, noise_sigma²·I), per-class counts from zipf_counts.
/// Sample ids are "c<class>_s<index>" with zero-padded indices so that
/// lexicographic order equals generation order. Bit-identical for equal specs.
SynthResult gen_synthetic_corpus(const SynthSpec& spec);

/// Deterministic role split for a synthetic corpus: per class the samples are
/// shuffled with the seeded generator and apportioned train/val/gallery/test
/// by 60/10/20/10 (largest remainder, ties resolved in that role order).
/// Classes with count <= rare_max_count are tagged rare, the rest frequent.
SplitManifest synth_manifest(const EmbeddingCorpus& corpus, int rare_max_count,
                             std::uint64_t seed);

} // namespace protoret

#endif
