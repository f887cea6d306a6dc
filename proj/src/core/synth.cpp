#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "core/rng.hpp"

namespace protoret {

namespace {

std::size_t digits(std::size_t n) {
  std::size_t d = 1;
  while (n >= 10) { n /= 10; ++d; }
  return d;
}

std::string padded(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

} // namespace

void validate_spec(const SynthSpec& spec) {
  if (spec.n_classes < 2) throw std::invalid_argument("need >= 2 classes");
  if (spec.dim < 1) throw std::invalid_argument("dim must be >= 1");
  if (spec.zipf_s < 0.0) throw std::invalid_argument("zipf_s must be >= 0");
  if (spec.count_min < 1) throw std::invalid_argument("count_min must be >= 1");
  if (spec.count_min > spec.count_max)
    throw std::invalid_argument("count_min must be <= count_max");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("noise_sigma must be >= 0");
}

std::vector<int> zipf_counts(int n_classes, double zipf_s, int count_min,
                             int count_max) {
  if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
  if (count_min < 1 || count_min > count_max)
    throw std::invalid_argument("invalid count range");
  if (zipf_s < 0.0) throw std::invalid_argument("zipf_s must be >= 0");
  std::vector<int> counts(static_cast<std::size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) {
    const double raw = count_max / std::pow(static_cast<double>(k + 1), zipf_s);
    const long long rounded = std::llround(raw);
    counts[static_cast<std::size_t>(k)] = static_cast<int>(
        std::clamp(rounded, static_cast<long long>(count_min),
                   static_cast<long long>(count_max)));
  }
  return counts;
}

SynthResult gen_synthetic_corpus(const SynthSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  const auto n_classes = static_cast<std::size_t>(spec.n_classes);
  const auto dim = static_cast<std::size_t>(spec.dim);
  const auto counts =
      zipf_counts(spec.n_classes, spec.zipf_s, spec.count_min, spec.count_max);

  Matrix means(n_classes, dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto row = means.row(c);
    double norm = 0.0;
    // Normalized Gaussian draw is uniform on the sphere. A zero draw has
    // probability zero but would divide by zero, hence the retry loop.
    do {
      for (double& v : row) v = rng.gaussian();
      norm = std::sqrt(norm2(row));
    } while (norm == 0.0);
    for (double& v : row) v /= norm;
  }

  std::size_t total = 0;
  for (int c : counts) total += static_cast<std::size_t>(c);

  const std::size_t class_width = digits(n_classes - 1);
  std::size_t max_count = 0;
  for (int c : counts) max_count = std::max(max_count, static_cast<std::size_t>(c));
  const std::size_t sample_width = digits(max_count == 0 ? 0 : max_count - 1);

  SynthResult result;
  result.class_means = means;
  result.corpus.sample_ids.reserve(total);
  result.corpus.class_labels.reserve(total);
  result.corpus.vectors = Matrix(total, dim);

  std::size_t row_index = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::string label = "c" + padded(c, class_width);
    for (std::size_t s = 0; s < static_cast<std::size_t>(counts[c]); ++s) {
      result.corpus.sample_ids.push_back(label + "_s" + padded(s, sample_width));
      result.corpus.class_labels.push_back(label);
      auto row = result.corpus.vectors.row(row_index++);
      const auto mean = means.row(c);
      for (std::size_t d = 0; d < dim; ++d)
        row[d] = mean[d] + spec.noise_sigma * rng.gaussian();
    }
  }
  return result;
}

SplitManifest synth_manifest(const EmbeddingCorpus& corpus, int rare_max_count,
                             std::uint64_t seed) {
  const ClassIndex index = build_class_index(corpus);
  Rng rng(seed);

  SplitManifest manifest;
  manifest.role.assign(corpus.size(), std::nullopt);
  manifest.group.assign(corpus.size(), std::nullopt);

  constexpr double proportions[4] = {0.6, 0.1, 0.2, 0.1};
  constexpr Role roles[4] = {Role::train, Role::val, Role::gallery, Role::test};

  for (std::size_t c = 0; c < index.num_classes(); ++c) {
    std::vector<std::size_t> members = index.members[c];
    rng.shuffle(members);

    const std::size_t count = members.size();
    std::size_t quota[4];
    double fraction[4];
    std::size_t assigned = 0;
    for (int r = 0; r < 4; ++r) {
      const double share = proportions[r] * static_cast<double>(count);
      quota[r] = static_cast<std::size_t>(share);
      fraction[r] = share - static_cast<double>(quota[r]);
      assigned += quota[r];
    }
    // Largest remainder; ties fall to the earlier role.
    while (assigned < count) {
      int best = 0;
      for (int r = 1; r < 4; ++r)
        if (fraction[r] > fraction[best]) best = r;
      ++quota[best];
      fraction[best] = -1.0;
      ++assigned;
    }

    const Group group = index.counts[c] <= static_cast<std::size_t>(rare_max_count)
                            ? Group::rare
                            : Group::frequent;
    std::size_t cursor = 0;
    for (int r = 0; r < 4; ++r) {
      for (std::size_t i = 0; i < quota[r]; ++i, ++cursor) {
        manifest.role[members[cursor]] = roles[r];
        manifest.group[members[cursor]] = group;
      }
    }
  }
  return manifest;
}

} // namespace protoret
