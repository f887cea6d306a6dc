#ifndef PROTORET_CORE_PROTOHEAD_HPP
#define PROTORET_CORE_PROTOHEAD_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/corpus.hpp"
#include "core/matrix.hpp"
#include "core/rng.hpp"
#include "core/sampler.hpp"

namespace protoret {

/// Trainable head over frozen embeddings: linear adapter W (applied as
/// z = x·W on row vectors) and a learnable softmax temperature tau.
struct ProtoModel {
  Matrix W; // D_in × D_out
  double tau = 10.0;

  std::size_t dim_in() const { return W.rows(); }
  std::size_t dim_out() const { return W.cols(); }
};

/// Whole-set linear softmax classifier baseline.
struct ClassifierModel {
  Matrix W;                             // D × C
  std::vector<double> b;                // C
  std::vector<std::string> class_order; // lexicographic
};

struct TaskLossResult {
  double loss = 0.0;
  Matrix grad_W;
  double grad_tau = 0.0;
  Matrix query_probs; // (K·Q)×K for a task, stacked per task for an episode
};

struct ClassifierLossResult {
  double loss = 0.0;
  Matrix grad_W;
  std::vector<double> grad_b;
};

ProtoModel make_identity_model(std::size_t dim, double tau = 10.0);

/// Column-orthonormal W from seeded Gaussian draws; requires d_out <= d_in.
ProtoModel make_orthonormal_model(std::size_t d_in, std::size_t d_out, Rng& rng,
                                  double tau = 10.0);

/// Entries i.i.d. N(0, 1/d_in); distorts the cosine geometry, which is the
/// point: it is the deliberately bad starting adapter for learning-effect
/// experiments.
ProtoModel make_random_model(std::size_t d_in, std::size_t d_out, Rng& rng,
                             double tau = 10.0);

void validate_model(const ProtoModel& model);

/// vectors (M×D_in) · W. Throws on a column-count mismatch.
Matrix adapt(const ProtoModel& model, const Matrix& vectors);

/// Row k of the result is the arithmetic mean of the k-th consecutive group
/// of `stacked` rows; group_sizes must be positive and sum to stacked.rows().
Matrix compute_centroids(const Matrix& stacked,
                         std::span<const std::size_t> group_sizes);

/// Entry (q,k) = tau · <z_q, c_k> / (|z_q|·|c_k|). Throws naming the
/// offending row when a query or centroid has zero norm.
Matrix cosine_logits(const Matrix& queries, const Matrix& centroids, double tau);

/// Numerically stable per-row softmax (max subtraction).
Matrix softmax_rows(const Matrix& logits);

/// Mean query cross-entropy of the cosine-softmax head on one task, with
/// exact analytic gradients through softmax, cosine, centroid mean and the
/// adapter.
TaskLossResult task_loss_and_grad(const ProtoModel& model, const FewShotTask& task,
                                  const EmbeddingCorpus& corpus);

/// Mean of the per-task losses; gradients are the means of task gradients.
TaskLossResult episode_loss_and_grad(const ProtoModel& model, const Episode& episode,
                                     const EmbeddingCorpus& corpus);

/// Softmax cross-entropy of logits x·W + b over the model's class order.
ClassifierLossResult classifier_loss_and_grad(const ClassifierModel& model,
                                              const Matrix& batch,
                                              std::span<const std::string> labels);

/// Central finite differences (f(p+h·e_i) − f(p−h·e_i)) / 2h per coordinate.
std::vector<double> numeric_gradient(
    const std::function<double(std::span<const double>)>& loss_fn,
    std::span<const double> params, double h);

/// Checkpoint files. Proto header: "protoret-model,v1,<D_in>,<D_out>", then
/// tau, then W row-major; classifier header: "protoret-classifier,v1,<D>,<C>",
/// then the class order, then b, then W row-major. CSV floats with full
/// round-trip precision.
void save_model(const ProtoModel& model, const std::string& path);
ProtoModel load_model(const std::string& path);
void save_classifier(const ClassifierModel& model, const std::string& path);
ClassifierModel load_classifier(const std::string& path);

enum class CheckpointKind { proto, classifier };
CheckpointKind checkpoint_kind(const std::string& path);

} // namespace protoret

#endif
