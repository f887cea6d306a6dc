#include "core/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace protoret {

const char* aggregation_name(Aggregation agg) {
  return agg == Aggregation::min ? "min" : "mean";
}

namespace {

Matrix gather_rows(const EmbeddingCorpus& corpus,
                   std::span<const std::size_t> rows) {
  Matrix out(rows.size(), corpus.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = corpus.vectors.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::string> gather_labels(const EmbeddingCorpus& corpus,
                                       std::span<const std::size_t> rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (std::size_t row : rows) out.push_back(corpus.class_labels[row]);
  return out;
}

std::map<int, double> standard_ks_accuracy(
    const std::vector<std::vector<std::string>>& rankings,
    std::span<const std::string> truths) {
  return topk_accuracy(rankings, truths, std::span<const int>(kTopK));
}

} // namespace

std::vector<std::string> rank_classes(const Matrix& gallery,
                                      std::span<const std::string> labels,
                                      std::span<const double> query,
                                      Aggregation agg) {
  if (gallery.rows() == 0) throw std::invalid_argument("rank_classes: empty gallery");
  if (gallery.rows() != labels.size())
    throw std::invalid_argument("rank_classes: gallery/label size mismatch");
  if (gallery.cols() != query.size())
    throw std::invalid_argument("rank_classes: dimension mismatch");

  const double qn = std::sqrt(norm2(query));
  if (qn == 0.0) throw std::invalid_argument("rank_classes: zero-norm query");

  // score per class: min or mean of (1 - cos) over that class's images.
  std::map<std::string, std::pair<double, std::size_t>> acc; // sum-or-min, count
  for (std::size_t i = 0; i < gallery.rows(); ++i) {
    const auto row = gallery.row(i);
    const double rn = std::sqrt(norm2(row));
    if (rn == 0.0)
      throw std::invalid_argument("rank_classes: zero-norm gallery row " +
                                  std::to_string(i));
    const double distance = 1.0 - dot(row, query) / (rn * qn);
    auto [it, inserted] = acc.try_emplace(labels[i], distance, 1);
    if (!inserted) {
      if (agg == Aggregation::min)
        it->second.first = std::min(it->second.first, distance);
      else
        it->second.first += distance;
      ++it->second.second;
    }
  }

  std::vector<std::pair<double, std::string>> scored;
  scored.reserve(acc.size());
  for (const auto& [cls, entry] : acc) {
    const double score = agg == Aggregation::min
                             ? entry.first
                             : entry.first / static_cast<double>(entry.second);
    scored.emplace_back(score, cls);
  }
  std::sort(scored.begin(), scored.end()); // ties fall back to the class name
  std::vector<std::string> ranked;
  ranked.reserve(scored.size());
  for (auto& [score, cls] : scored) ranked.push_back(std::move(cls));
  return ranked;
}

std::map<int, double> topk_accuracy(
    const std::vector<std::vector<std::string>>& rankings,
    std::span<const std::string> truths, std::span<const int> ks) {
  if (rankings.size() != truths.size() || rankings.empty())
    throw std::invalid_argument("topk_accuracy: rankings/truths mismatch");
  std::map<int, double> out;
  for (int k : ks) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
      const auto& ranking = rankings[q];
      const std::size_t limit =
          std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
      for (std::size_t i = 0; i < limit; ++i) {
        if (ranking[i] == truths[q]) {
          ++hits;
          break;
        }
      }
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(rankings.size());
  }
  return out;
}

RetrievalReport classification_protocol(const ClassifierModel& model,
                                        const Matrix& test,
                                        std::span<const std::string> labels) {
  if (test.rows() == 0)
    throw InfeasibleError("classification: empty test set");
  for (const auto& label : labels) {
    if (!std::binary_search(model.class_order.begin(), model.class_order.end(),
                            label))
      throw std::invalid_argument("classification: unknown test label " + label);
  }

  Matrix logits = matmul(test, model.W);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += model.b[c];
  }
  const Matrix probs = softmax_rows(logits);

  std::vector<std::vector<std::string>> rankings(test.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::vector<std::pair<double, std::string>> scored;
    scored.reserve(model.class_order.size());
    for (std::size_t c = 0; c < model.class_order.size(); ++c)
      scored.emplace_back(-probs(i, c), model.class_order[c]);
    std::sort(scored.begin(), scored.end());
    for (auto& [neg, cls] : scored) rankings[i].push_back(std::move(cls));
  }

  RetrievalReport report;
  report.protocol = "classification";
  report.topk = standard_ks_accuracy(rankings, labels);
  report.n_queries = test.rows();
  report.metadata.emplace_back("classes", std::to_string(model.class_order.size()));
  return report;
}

RetrievalReport classification_protocol(const ClassifierModel& model,
                                        const EmbeddingCorpus& corpus,
                                        const SplitManifest& manifest) {
  const auto test_rows = manifest.rows_with(Role::test, Group::frequent);
  if (test_rows.empty()) throw InfeasibleError("frequent test split is empty");
  const Matrix test = gather_rows(corpus, test_rows);
  const auto labels = gather_labels(corpus, test_rows);
  return classification_protocol(model, test, labels);
}

RetrievalReport frequent_retrieval_protocol(const ProtoModel& model,
                                            const EmbeddingCorpus& corpus,
                                            const SplitManifest& manifest,
                                            Aggregation agg) {
  const auto gallery_rows = manifest.rows_with(Role::gallery, Group::frequent);
  const auto test_rows = manifest.rows_with(Role::test, Group::frequent);
  if (gallery_rows.empty()) throw InfeasibleError("frequent gallery is empty");
  if (test_rows.empty()) throw InfeasibleError("frequent test split is empty");

  const Matrix gallery = adapt(model, gather_rows(corpus, gallery_rows));
  const Matrix queries = adapt(model, gather_rows(corpus, test_rows));
  const auto gallery_labels = gather_labels(corpus, gallery_rows);
  const auto truths = gather_labels(corpus, test_rows);

  std::vector<std::vector<std::string>> rankings(test_rows.size());
  for (std::size_t q = 0; q < test_rows.size(); ++q)
    rankings[q] = rank_classes(gallery, gallery_labels, queries.row(q), agg);

  RetrievalReport report;
  report.protocol = "frequent_retrieval";
  report.topk = standard_ks_accuracy(rankings, truths);
  report.n_queries = test_rows.size();
  report.metadata.emplace_back("aggregation", aggregation_name(agg));
  report.metadata.emplace_back("gallery_size", std::to_string(gallery_rows.size()));
  report.metadata.emplace_back("adapter", std::to_string(model.dim_in()) + "x" +
                                              std::to_string(model.dim_out()));
  report.metadata.emplace_back("tau", format_double(model.tau));
  return report;
}

std::vector<std::vector<std::size_t>> rare_cv_folds(const ClassIndex& rare_index,
                                                    std::uint64_t seed) {
  constexpr std::size_t n_folds = 10;
  std::vector<std::vector<std::size_t>> folds(n_folds);
  Rng rng(seed);
  for (std::size_t c = 0; c < rare_index.num_classes(); ++c) {
    std::vector<std::size_t> members = rare_index.members[c];
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i)
      folds[i % n_folds].push_back(members[i]);
  }
  return folds;
}

RetrievalReport rare_cv_protocol(const ProtoModel& model,
                                 const EmbeddingCorpus& corpus,
                                 const SplitManifest& manifest, std::uint64_t seed,
                                 Aggregation agg) {
  const auto rare_rows = manifest.rows_in_group(Group::rare);
  if (rare_rows.empty()) throw InfeasibleError("rare CV infeasible: no rare samples");
  const ClassIndex rare_index = build_class_index(corpus, rare_rows);

  bool any_pair = false;
  for (std::size_t count : rare_index.counts)
    if (count >= 2) any_pair = true;
  if (!any_pair)
    throw InfeasibleError("rare CV infeasible: no rare class has >= 2 samples");

  const auto folds = rare_cv_folds(rare_index, seed);

  // Queries come only from classes with at least two rare samples.
  std::unordered_map<std::string, std::size_t> rare_count;
  for (std::size_t c = 0; c < rare_index.num_classes(); ++c)
    rare_count.emplace(rare_index.classes[c], rare_index.counts[c]);

  const Matrix adapted_all = adapt(model, gather_rows(corpus, rare_rows));
  std::unordered_map<std::size_t, std::size_t> adapted_of; // corpus row -> local
  for (std::size_t i = 0; i < rare_rows.size(); ++i)
    adapted_of.emplace(rare_rows[i], i);

  RetrievalReport report;
  report.protocol = "rare_cv";
  report.per_fold.emplace();

  std::map<int, double> mean_topk;
  for (int k : kTopK) mean_topk[k] = 0.0;
  std::size_t scored_folds = 0;
  std::size_t total_queries = 0;

  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> test_rows;
    for (std::size_t row : folds[f])
      if (rare_count.at(corpus.class_labels[row]) >= 2) test_rows.push_back(row);

    std::vector<std::size_t> gallery_rows;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g == f) continue;
      gallery_rows.insert(gallery_rows.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(gallery_rows.begin(), gallery_rows.end());

    FoldReport fold;
    fold.n_queries = test_rows.size();
    if (test_rows.empty() || gallery_rows.empty()) {
      for (int k : kTopK) fold.topk[k] = 0.0;
      report.per_fold->push_back(std::move(fold));
      continue;
    }

    Matrix gallery(gallery_rows.size(), adapted_all.cols());
    std::vector<std::string> gallery_labels;
    gallery_labels.reserve(gallery_rows.size());
    for (std::size_t i = 0; i < gallery_rows.size(); ++i) {
      const auto src = adapted_all.row(adapted_of.at(gallery_rows[i]));
      std::copy(src.begin(), src.end(), gallery.row(i).begin());
      gallery_labels.push_back(corpus.class_labels[gallery_rows[i]]);
    }

    std::vector<std::vector<std::string>> rankings(test_rows.size());
    std::vector<std::string> truths;
    truths.reserve(test_rows.size());
    for (std::size_t q = 0; q < test_rows.size(); ++q) {
      rankings[q] = rank_classes(gallery, gallery_labels,
                                 adapted_all.row(adapted_of.at(test_rows[q])), agg);
      truths.push_back(corpus.class_labels[test_rows[q]]);
    }
    fold.topk = standard_ks_accuracy(rankings, truths);
    for (int k : kTopK) mean_topk[k] += fold.topk[k];
    ++scored_folds;
    total_queries += test_rows.size();
    report.per_fold->push_back(std::move(fold));
  }

  if (scored_folds == 0)
    throw InfeasibleError("rare CV infeasible: no fold produced test queries");
  for (int k : kTopK) mean_topk[k] /= static_cast<double>(scored_folds);
  report.topk = std::move(mean_topk);
  report.n_queries = total_queries;
  report.metadata.emplace_back("aggregation", aggregation_name(agg));
  report.metadata.emplace_back("seed", std::to_string(seed));
  report.metadata.emplace_back("folds_scored", std::to_string(scored_folds));
  report.metadata.emplace_back("adapter", std::to_string(model.dim_in()) + "x" +
                                              std::to_string(model.dim_out()));
  report.metadata.emplace_back("tau", format_double(model.tau));
  return report;
}

EmbeddingCorpus fuse_embeddings(std::span<const EmbeddingCorpus* const> parts) {
  if (parts.size() < 2)
    throw std::invalid_argument("fuse_embeddings: need at least two corpora");

  const EmbeddingCorpus& base = *parts[0];
  std::vector<std::string> offenders;
  std::vector<std::vector<std::size_t>> row_of_part(parts.size());

  for (std::size_t p = 1; p < parts.size(); ++p) {
    std::unordered_map<std::string, std::size_t> rows;
    rows.reserve(parts[p]->size());
    for (std::size_t i = 0; i < parts[p]->size(); ++i)
      rows.emplace(parts[p]->sample_ids[i], i);

    row_of_part[p].resize(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      const auto it = rows.find(base.sample_ids[i]);
      if (it == rows.end()) {
        if (offenders.size() < 5) offenders.push_back(base.sample_ids[i]);
        continue;
      }
      if (parts[p]->class_labels[it->second] != base.class_labels[i]) {
        if (offenders.size() < 5) offenders.push_back(base.sample_ids[i]);
      }
      row_of_part[p][i] = it->second;
    }
    if (parts[p]->size() != base.size()) {
      for (std::size_t i = 0; i < parts[p]->size() && offenders.size() < 5; ++i) {
        const auto& id = parts[p]->sample_ids[i];
        if (std::find(base.sample_ids.begin(), base.sample_ids.end(), id) ==
            base.sample_ids.end())
          offenders.push_back(id);
      }
    }
  }
  if (!offenders.empty()) {
    std::string msg = "fuse: sample id/label mismatch:";
    for (const auto& id : offenders) msg += " " + id;
    throw std::invalid_argument(msg);
  }

  std::vector<EmbeddingCorpus> normalized;
  normalized.reserve(parts.size());
  for (const EmbeddingCorpus* part : parts) normalized.push_back(l2_normalize(*part));

  std::size_t fused_dim = 0;
  for (const EmbeddingCorpus* part : parts) fused_dim += part->dim();

  EmbeddingCorpus fused;
  fused.sample_ids = base.sample_ids;
  fused.class_labels = base.class_labels;
  fused.vectors = Matrix(base.size(), fused_dim);
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto out = fused.vectors.row(i);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t src_row = p == 0 ? i : row_of_part[p][i];
      const auto src = normalized[p].vectors.row(src_row);
      std::copy(src.begin(), src.end(), out.begin() + offset);
      offset += src.size();
    }
  }
  return fused;
}

double validation_top1(const ProtoModel& model, const EmbeddingCorpus& corpus,
                       std::span<const std::size_t> gallery_rows,
                       std::span<const std::size_t> query_rows,
                       Aggregation agg) {
  if (gallery_rows.empty() || query_rows.empty())
    throw InfeasibleError("validation retrieval needs non-empty gallery and queries");
  const Matrix gallery = adapt(model, gather_rows(corpus, gallery_rows));
  const Matrix queries = adapt(model, gather_rows(corpus, query_rows));
  const auto gallery_labels = gather_labels(corpus, gallery_rows);

  std::size_t hits = 0;
  for (std::size_t q = 0; q < query_rows.size(); ++q) {
    const auto ranking = rank_classes(gallery, gallery_labels, queries.row(q), agg);
    if (!ranking.empty() && ranking[0] == corpus.class_labels[query_rows[q]]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(query_rows.size());
}

std::string report_to_json(const RetrievalReport& report) {
  nlohmann::ordered_json j;
  j["protocol"] = report.protocol;
  nlohmann::ordered_json topk;
  for (const auto& [k, acc] : report.topk) topk[std::to_string(k)] = acc;
  j["topk"] = topk;
  j["n_queries"] = report.n_queries;
  if (report.per_fold.has_value()) {
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const FoldReport& fold : *report.per_fold) {
      nlohmann::ordered_json fj;
      nlohmann::ordered_json ft;
      for (const auto& [k, acc] : fold.topk) ft[std::to_string(k)] = acc;
      fj["topk"] = ft;
      fj["n_queries"] = fold.n_queries;
      folds.push_back(fj);
    }
    j["per_fold"] = folds;
  }
  nlohmann::ordered_json meta;
  for (const auto& [key, value] : report.metadata) meta[key] = value;
  j["metadata"] = meta;
  return j.dump(2);
}

std::string report_to_csv(const RetrievalReport& report, bool include_header) {
  std::ostringstream out;
  if (include_header) {
    out << "protocol,n_queries";
    for (int k : kTopK) out << ",top" << k;
    out << '\n';
  }
  out << report.protocol << ',' << report.n_queries;
  for (int k : kTopK) {
    const auto it = report.topk.find(k);
    out << ',' << format_double(it == report.topk.end() ? 0.0 : it->second);
  }
  out << '\n';
  return out.str();
}

} // namespace protoret
