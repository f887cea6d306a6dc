#ifndef PROTORET_CORE_EVAL_HPP
#define PROTORET_CORE_EVAL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/corpus.hpp"
#include "core/protohead.hpp"

namespace protoret {

/// The reported neighbourhood sizes.
inline constexpr std::array<int, 4> kTopK{1, 5, 10, 30};

/// How a class is scored against a query: by its closest gallery image
/// (default) or by the mean distance over its gallery images.
enum class Aggregation { min, mean };

const char* aggregation_name(Aggregation agg);

struct FoldReport {
  std::map<int, double> topk;
  std::size_t n_queries = 0;
};

struct RetrievalReport {
  std::string protocol; // classification | frequent_retrieval | rare_cv
  std::map<int, double> topk;
  std::size_t n_queries = 0;
  std::optional<std::vector<FoldReport>> per_fold; // rare_cv only, length 10
  std::vector<std::pair<std::string, std::string>> metadata;
};

/// Ranks every gallery class by its aggregated cosine distance
/// (1 - cosine similarity) to the query, ascending, ties broken
/// lexicographically by class identifier.
std::vector<std::string> rank_classes(const Matrix& gallery,
                                      std::span<const std::string> labels,
                                      std::span<const double> query,
                                      Aggregation agg = Aggregation::min);

/// accuracy(k) = fraction of queries whose truth appears within the first
/// min(k, #classes) ranked classes.
std::map<int, double> topk_accuracy(
    const std::vector<std::vector<std::string>>& rankings,
    std::span<const std::string> truths, std::span<const int> ks);

/// Softmax-output ranking of the classifier on a labeled test set.
RetrievalReport classification_protocol(const ClassifierModel& model,
                                        const Matrix& test,
                                        std::span<const std::string> labels);

/// Same, over the manifest's frequent test split.
RetrievalReport classification_protocol(const ClassifierModel& model,
                                        const EmbeddingCorpus& corpus,
                                        const SplitManifest& manifest);

/// Adapted frequent-test queries ranked against the adapted frequent gallery.
RetrievalReport frequent_retrieval_protocol(const ProtoModel& model,
                                            const EmbeddingCorpus& corpus,
                                            const SplitManifest& manifest,
                                            Aggregation agg = Aggregation::min);

/// 10-fold assignment of the rare rows: per class (lexicographic order) the
/// members are shuffled with the seeded generator and dealt round-robin to
/// folds 0,1,2,... Returns row lists per fold.
std::vector<std::vector<std::size_t>> rare_cv_folds(const ClassIndex& rare_index,
                                                    std::uint64_t seed);

/// Fold i: test = fold-i samples whose class has >= 2 rare samples, gallery =
/// every rare sample outside fold i (singleton classes stay gallery-only).
/// Reports per-fold top-k plus the mean over folds that have test queries.
RetrievalReport rare_cv_protocol(const ProtoModel& model,
                                 const EmbeddingCorpus& corpus,
                                 const SplitManifest& manifest, std::uint64_t seed,
                                 Aggregation agg = Aggregation::min);

/// Feature-level fusion: each input corpus is row-wise L2-normalized, then
/// vectors are concatenated per sample in input order (rows follow the first
/// corpus). Cosine similarity of fused vectors equals the mean of the
/// per-encoder cosine similarities.
EmbeddingCorpus fuse_embeddings(std::span<const EmbeddingCorpus* const> parts);

/// Validation retrieval used for model selection: val rows ranked against the
/// train gallery under the current adapter; returns top-1 accuracy.
double validation_top1(const ProtoModel& model, const EmbeddingCorpus& corpus,
                       std::span<const std::size_t> gallery_rows,
                       std::span<const std::size_t> query_rows,
                       Aggregation agg = Aggregation::min);

/// JSON with stable key order; CSV as a flat row for sweep aggregation.
std::string report_to_json(const RetrievalReport& report);
std::string report_to_csv(const RetrievalReport& report, bool include_header);

} // namespace protoret

#endif
