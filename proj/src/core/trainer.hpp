#ifndef PROTORET_CORE_TRAINER_HPP
#define PROTORET_CORE_TRAINER_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/corpus.hpp"
#include "core/protohead.hpp"
#include "core/sampler.hpp"

namespace protoret {

/// Adapter starting point for meta-training. `standard` is the identity when
/// the dimensions match and a column-orthonormal seeded matrix otherwise;
/// `random` is a seeded Gaussian matrix (a deliberately distorted start).
enum class AdapterInit { standard, random };

struct TrainConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.0005;
  int epochs = 25;
  int episodes_per_epoch = 100;
  EpisodeSpec episode_spec;
  std::uint64_t seed = 0;
  std::size_t adapter_dim = 0; // 0 = same as the corpus dim
  AdapterInit adapter_init = AdapterInit::standard;
};

void validate_config(const TrainConfig& config);

struct TrainHistory {
  std::vector<double> train_loss; // per-epoch mean episode loss
  std::vector<double> val_top1;   // per-epoch validation top-1 retrieval
  std::vector<double> seconds;    // wall clock per epoch
  int best_epoch = 0;

  double best_val_top1() const { return val_top1.at(static_cast<std::size_t>(best_epoch)); }
  /// CSV (epoch, loss, val_top1).
  std::string to_csv() const;
};

/// p <- p - lr·(g + wd·p) with weight decay applied only where the mask is set.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double weight_decay, std::span<const std::uint8_t> decay_mask);

/// Episodic meta-training on the train split, validation top-1 retrieval
/// (val queries against the train gallery) after every epoch, returns the
/// best-validation checkpoint (ties -> earliest epoch) and the full history.
std::pair<ProtoModel, TrainHistory> train_meta(const EmbeddingCorpus& corpus,
                                               const SplitManifest& manifest,
                                               const TrainConfig& config);

/// Full-batch softmax-classifier training on the train split with the same
/// optimizer rule. The classifier has no adapter, so validation retrieval is
/// constant across epochs; selection falls to the best validation loss epoch.
std::pair<ClassifierModel, TrainHistory> train_classifier(
    const EmbeddingCorpus& corpus, const SplitManifest& manifest,
    const TrainConfig& config);

/// Builds the starting adapter for a config without training.
ProtoModel initial_model(const TrainConfig& config, std::size_t corpus_dim);

} // namespace protoret

#endif
