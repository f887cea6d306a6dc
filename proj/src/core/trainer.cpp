#include "core/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "core/error.hpp"
#include "core/eval.hpp"

namespace protoret {

namespace {

constexpr double kTauFloor = 1e-3;

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

Matrix gather_rows(const EmbeddingCorpus& corpus,
                   std::span<const std::size_t> rows) {
  Matrix out(rows.size(), corpus.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = corpus.vectors.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

} // namespace

void validate_config(const TrainConfig& config) {
  // lr = 0 is allowed: it is the documented no-op optimizer.
  if (config.learning_rate < 0.0)
    throw std::invalid_argument("learning_rate must be >= 0");
  if (config.weight_decay < 0.0)
    throw std::invalid_argument("weight_decay must be >= 0");
  if (config.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (config.episodes_per_epoch < 1)
    throw std::invalid_argument("episodes_per_epoch must be >= 1");
  validate_spec(config.episode_spec);
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,loss,val_top1\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    out << e << ',' << format_double(train_loss[e]) << ','
        << format_double(val_top1[e]) << '\n';
  return out.str();
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double weight_decay, std::span<const std::uint8_t> decay_mask) {
  if (params.size() != grads.size() || params.size() != decay_mask.size())
    throw std::invalid_argument("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + (decay_mask[i] ? weight_decay * params[i] : 0.0);
    params[i] -= lr * g;
  }
}

ProtoModel initial_model(const TrainConfig& config, std::size_t corpus_dim) {
  const std::size_t d_in = corpus_dim;
  const std::size_t d_out = config.adapter_dim == 0 ? d_in : config.adapter_dim;
  Rng rng(config.seed);
  if (config.adapter_init == AdapterInit::random)
    return make_random_model(d_in, d_out, rng);
  if (d_in == d_out) return make_identity_model(d_in);
  return make_orthonormal_model(d_in, d_out, rng);
}

std::pair<ProtoModel, TrainHistory> train_meta(const EmbeddingCorpus& corpus,
                                               const SplitManifest& manifest,
                                               const TrainConfig& config) {
  validate_config(config);
  if (manifest.role.size() != corpus.size())
    throw std::invalid_argument("train_meta: manifest does not match corpus");

  const auto train_rows = manifest.rows_with(Role::train);
  const auto val_rows = manifest.rows_with(Role::val);
  if (train_rows.empty()) throw InfeasibleError("train split is empty");
  if (val_rows.empty()) throw InfeasibleError("val split is empty");

  const ClassIndex index = build_class_index(corpus, train_rows);
  // Eligibility is fixed once per run.
  const auto eligible = eligible_class_positions(index, config.episode_spec);
  if (eligible.size() < static_cast<std::size_t>(config.episode_spec.n_way))
    throw InfeasibleError(
        "episodic sampling infeasible: n_way=" +
        std::to_string(config.episode_spec.n_way) + " but only " +
        std::to_string(eligible.size()) + " classes have at least n_shot+n_query=" +
        std::to_string(config.episode_spec.n_shot + config.episode_spec.n_query) +
        " samples in the train split");

  Rng rng(config.seed);
  ProtoModel model;
  {
    const std::size_t d_in = corpus.dim();
    const std::size_t d_out =
        config.adapter_dim == 0 ? d_in : config.adapter_dim;
    if (config.adapter_init == AdapterInit::random)
      model = make_random_model(d_in, d_out, rng);
    else if (d_in == d_out)
      model = make_identity_model(d_in);
    else
      model = make_orthonormal_model(d_in, d_out, rng);
  }

  std::vector<std::uint8_t> w_mask(model.W.size(), 1);
  const std::uint8_t tau_mask = 0;

  TrainHistory history;
  ProtoModel best_model = model;
  double best_top1 = -1.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (int ep = 0; ep < config.episodes_per_epoch; ++ep) {
      TaskLossResult result;
      try {
        const Episode episode =
            sample_episode(rng, index, config.episode_spec, eligible);
        result = episode_loss_and_grad(model, episode, corpus);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error("training aborted at epoch " +
                                 std::to_string(epoch) + " episode " +
                                 std::to_string(ep) + ": " + e.what());
      }
      if (!std::isfinite(result.loss))
        throw std::runtime_error("divergence at epoch " + std::to_string(epoch) +
                                 " episode " + std::to_string(ep) +
                                 ": non-finite loss");
      loss_sum += result.loss;
      sgd_step(model.W.flat(), result.grad_W.flat(), config.learning_rate,
               config.weight_decay, w_mask);
      sgd_step({&model.tau, 1}, {&result.grad_tau, 1}, config.learning_rate,
               config.weight_decay, {&tau_mask, 1});
      model.tau = std::max(model.tau, kTauFloor);
    }

    const double epoch_loss =
        loss_sum / static_cast<double>(config.episodes_per_epoch);
    const double top1 = validation_top1(model, corpus, train_rows, val_rows);
    history.train_loss.push_back(epoch_loss);
    history.val_top1.push_back(top1);
    history.seconds.push_back(elapsed_seconds(start));
    if (top1 > best_top1) {
      best_top1 = top1;
      best_model = model;
      history.best_epoch = epoch;
    }
  }
  return {std::move(best_model), std::move(history)};
}

std::pair<ClassifierModel, TrainHistory> train_classifier(
    const EmbeddingCorpus& corpus, const SplitManifest& manifest,
    const TrainConfig& config) {
  validate_config(config);
  if (manifest.role.size() != corpus.size())
    throw std::invalid_argument("train_classifier: manifest does not match corpus");

  const auto train_rows = manifest.rows_with(Role::train);
  if (train_rows.empty()) throw InfeasibleError("train split is empty");
  const auto val_rows = manifest.rows_with(Role::val);

  const ClassIndex index = build_class_index(corpus, train_rows);
  if (index.num_classes() < 2)
    throw InfeasibleError("classifier needs >= 2 train classes");

  ClassifierModel model;
  model.class_order = index.classes;
  model.W = Matrix(corpus.dim(), model.class_order.size());
  model.b.assign(model.class_order.size(), 0.0);

  const Matrix train_batch = gather_rows(corpus, train_rows);
  std::vector<std::string> train_labels;
  train_labels.reserve(train_rows.size());
  for (std::size_t row : train_rows) train_labels.push_back(corpus.class_labels[row]);

  Matrix val_batch;
  std::vector<std::string> val_labels;
  if (!val_rows.empty()) {
    val_batch = gather_rows(corpus, val_rows);
    for (std::size_t row : val_rows) val_labels.push_back(corpus.class_labels[row]);
  }

  // The classifier has no adapter, so validation retrieval over the raw
  // embeddings does not change with training; compute it once.
  double constant_val_top1 = 0.0;
  if (!val_rows.empty()) {
    const ProtoModel identity = make_identity_model(corpus.dim());
    constant_val_top1 = validation_top1(identity, corpus, train_rows, val_rows);
  }

  std::vector<std::uint8_t> w_mask(model.W.size(), 1);
  const std::vector<std::uint8_t> b_mask(model.b.size(), 0);

  TrainHistory history;
  ClassifierModel best_model = model;
  double best_selection = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const ClassifierLossResult result =
        classifier_loss_and_grad(model, train_batch, train_labels);
    if (!std::isfinite(result.loss))
      throw std::runtime_error("divergence at epoch " + std::to_string(epoch) +
                               ": non-finite loss");
    sgd_step(model.W.flat(), result.grad_W.flat(), config.learning_rate,
             config.weight_decay, w_mask);
    sgd_step(model.b, result.grad_b, config.learning_rate, config.weight_decay,
             b_mask);

    // Selection metric: validation loss when a val split exists, otherwise
    // the (pre-update) train loss.
    double selection = result.loss;
    if (!val_rows.empty())
      selection = classifier_loss_and_grad(model, val_batch, val_labels).loss;

    history.train_loss.push_back(result.loss);
    history.val_top1.push_back(constant_val_top1);
    history.seconds.push_back(elapsed_seconds(start));
    if (selection < best_selection) {
      best_selection = selection;
      best_model = model;
      history.best_epoch = epoch;
    }
  }
  return {std::move(best_model), std::move(history)};
}

} // namespace protoret
