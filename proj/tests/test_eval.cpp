#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/synth.hpp"
#include "oracles.hpp"

using namespace protoret;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

SplitManifest all_rare_manifest(const EmbeddingCorpus& corpus) {
  SplitManifest manifest;
  manifest.role.assign(corpus.size(), Role::train);
  manifest.group.assign(corpus.size(), Group::rare);
  return manifest;
}

} // namespace

TEST_CASE("rank_classes orders by min cosine distance with lexicographic ties") {
  const Matrix gallery = from_rows({{1, 0}, {0, 1}});
  const std::vector<std::string> labels{"A", "B"};

  const std::vector<double> near_a{1.0, 0.1};
  CHECK(rank_classes(gallery, labels, near_a) ==
        std::vector<std::string>{"A", "B"});

  const std::vector<double> equidistant{1.0, 1.0};
  CHECK(rank_classes(gallery, labels, equidistant) ==
        std::vector<std::string>{"A", "B"});

  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(rank_classes(gallery, labels, zero), std::invalid_argument);
}

TEST_CASE("rank_classes matches the brute-force oracle on random galleries") {
  std::mt19937_64 gen(404);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 20 + gen() % 60;
    const std::size_t dim = 2 + gen() % 8;
    const std::size_t n_classes = 2 + gen() % 6;
    const EmbeddingCorpus corpus =
        oracles::random_corpus(gen(), n, dim, n_classes);
    const auto rows = oracles::to_rows(corpus.vectors);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> query(dim);
    for (double& v : query) v = normal(gen);

    for (const Aggregation agg : {Aggregation::min, Aggregation::mean}) {
      const auto got = rank_classes(corpus.vectors, corpus.class_labels, query, agg);
      const auto expected = oracles::brute_force_rank(rows, corpus.class_labels,
                                                      query, agg == Aggregation::mean);
      CHECK(got == expected);
    }
  }
}

TEST_CASE("topk_accuracy counts hits within the clamped prefix") {
  const std::vector<std::vector<std::string>> rankings{{"A", "B", "C"},
                                                       {"B", "A", "C"}};
  const std::vector<std::string> truths{"A", "A"};
  const std::vector<int> ks{1, 5};
  const auto acc = topk_accuracy(rankings, truths, ks);
  CHECK(acc.at(1) == 0.5);
  CHECK(acc.at(5) == 1.0);

  // truth absent from the gallery classes
  const std::vector<std::string> absent{"Z", "Z"};
  const auto none = topk_accuracy(rankings, absent, ks);
  CHECK(none.at(1) == 0.0);
  CHECK(none.at(5) == 0.0);

  // k beyond the class count clamps to the class count
  const std::vector<int> big{3, 30};
  const std::vector<std::string> truth_c{"C", "C"};
  const auto clamped = topk_accuracy(rankings, truth_c, big);
  CHECK(clamped.at(3) == clamped.at(30));
}

TEST_CASE("classification protocol ranks by softmax probability") {
  ClassifierModel model;
  model.class_order = {"a", "b", "c", "d"};
  model.W = Matrix(2, 4);
  model.b = {6.0, 0.0, 0.0, 0.0}; // class a dominates

  Matrix test(3, 2, 0.5);
  const std::vector<std::string> all_a{"a", "a", "a"};
  const RetrievalReport report = classification_protocol(model, test, all_a);
  CHECK(report.protocol == "classification");
  CHECK(report.topk.at(1) == 1.0);
  CHECK(report.n_queries == 3);

  // degenerate uniform classifier falls back to lexicographic order
  ClassifierModel uniform;
  uniform.class_order = {"a", "b", "c", "d"};
  uniform.W = Matrix(2, 4);
  uniform.b.assign(4, 0.0);
  Matrix one(1, 2, 1.0);
  CHECK(classification_protocol(uniform, one, std::vector<std::string>{"a"})
            .topk.at(1) == 1.0);
  const auto worst =
      classification_protocol(uniform, one, std::vector<std::string>{"d"});
  CHECK(worst.topk.at(1) == 0.0);
  CHECK(worst.topk.at(5) == 1.0);

  CHECK_THROWS_WITH_AS(
      classification_protocol(uniform, one, std::vector<std::string>{"z"}),
      doctest::Contains("unknown test label"), std::invalid_argument);
}

TEST_CASE("classification protocol matches a brute-force argsort oracle") {
  std::mt19937_64 gen(777);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassifierModel model;
  model.class_order = {"c0", "c1", "c2", "c3", "c4"};
  model.W = Matrix(3, 5);
  for (double& v : model.W.flat()) v = normal(gen);
  model.b.assign(5, 0.0);
  for (double& v : model.b) v = 0.2 * normal(gen);

  Matrix test(40, 3);
  for (double& v : test.flat()) v = normal(gen);
  std::vector<std::string> truths;
  for (std::size_t i = 0; i < 40; ++i)
    truths.push_back(model.class_order[gen() % 5]);

  const RetrievalReport report = classification_protocol(model, test, truths);

  // oracle: rank classes per query by descending probability, stable on name
  std::vector<std::vector<std::string>> rankings;
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> logits(5);
    for (std::size_t c = 0; c < 5; ++c) {
      logits[c] = model.b[c];
      for (std::size_t d = 0; d < 3; ++d) logits[c] += test(i, d) * model.W(d, c);
    }
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t c = 0; c < 5; ++c)
      scored.emplace_back(-logits[c], model.class_order[c]); // softmax is monotone
    std::stable_sort(scored.begin(), scored.end());
    std::vector<std::string> ranking;
    for (auto& [s, cls] : scored) ranking.push_back(cls);
    rankings.push_back(std::move(ranking));
  }
  const auto expected =
      oracles::brute_force_topk(rankings, truths, {1, 5, 10, 30});
  CHECK(report.topk == expected);
}

TEST_CASE("frequent retrieval protocol on a zero-noise corpus is perfect") {
  SynthSpec spec;
  spec.n_classes = 6;
  spec.dim = 8;
  spec.zipf_s = 0.0;
  spec.count_min = 10;
  spec.count_max = 10;
  spec.noise_sigma = 0.0;
  spec.seed = 55;
  const EmbeddingCorpus corpus = gen_synthetic_corpus(spec).corpus;
  const SplitManifest manifest = synth_manifest(corpus, 1, 9);

  const ProtoModel identity = make_identity_model(8);
  const RetrievalReport report =
      frequent_retrieval_protocol(identity, corpus, manifest);
  CHECK(report.protocol == "frequent_retrieval");
  CHECK(report.topk.at(1) == 1.0);
  CHECK(report.topk.at(30) == 1.0);

  // accuracies are non-decreasing in k
  double prev = 0.0;
  for (int k : kTopK) {
    CHECK(report.topk.at(k) >= prev);
    prev = report.topk.at(k);
  }
}

TEST_CASE("gallery restricted to one class scores its own queries only") {
  EmbeddingCorpus corpus;
  corpus.sample_ids = {"g1", "t1", "t2", "t3"};
  corpus.class_labels = {"A", "A", "B", "B"};
  corpus.vectors = Matrix(4, 2);
  corpus.vectors(0, 0) = 1.0;
  corpus.vectors(1, 0) = 1.0;
  corpus.vectors(2, 1) = 1.0;
  corpus.vectors(3, 1) = 1.0;

  SplitManifest manifest;
  manifest.role = {Role::gallery, Role::test, Role::test, Role::test};
  manifest.group.assign(4, Group::frequent);

  const ProtoModel identity = make_identity_model(2);
  const RetrievalReport report =
      frequent_retrieval_protocol(identity, corpus, manifest);
  CHECK(report.topk.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("frequent retrieval matches a query-by-query brute-force recomputation") {
  const EmbeddingCorpus corpus = oracles::random_corpus(31, 80, 6, 5);
  SplitManifest manifest;
  manifest.role.assign(corpus.size(), std::nullopt);
  manifest.group.assign(corpus.size(), std::nullopt);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    manifest.role[i] = (i % 4 == 0) ? Role::test : Role::gallery;
    manifest.group[i] = Group::frequent;
  }

  const ProtoModel identity = make_identity_model(6);
  const RetrievalReport report =
      frequent_retrieval_protocol(identity, corpus, manifest);

  const auto gallery_rows = manifest.rows_with(Role::gallery, Group::frequent);
  const auto test_rows = manifest.rows_with(Role::test, Group::frequent);
  std::vector<std::vector<double>> gallery;
  std::vector<std::string> labels;
  for (std::size_t row : gallery_rows) {
    gallery.push_back(oracles::to_vec(corpus.vectors.row(row)));
    labels.push_back(corpus.class_labels[row]);
  }
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> truths;
  for (std::size_t row : test_rows) {
    rankings.push_back(oracles::brute_force_rank(
        gallery, labels, oracles::to_vec(corpus.vectors.row(row))));
    truths.push_back(corpus.class_labels[row]);
  }
  CHECK(report.topk == oracles::brute_force_topk(rankings, truths, {1, 5, 10, 30}));
  CHECK(report.n_queries == test_rows.size());
}

TEST_CASE("rare CV folds partition samples with balanced per-class occupancy") {
  // class sizes 1, 2, 5, 9, 17 over rare rows
  EmbeddingCorpus corpus;
  const std::vector<std::pair<std::string, int>> sizes{
      {"a", 1}, {"b", 2}, {"c", 5}, {"d", 9}, {"e", 17}};
  std::size_t total = 0;
  for (const auto& [cls, count] : sizes) total += static_cast<std::size_t>(count);
  corpus.vectors = Matrix(total, 2, 1.0);
  for (const auto& [cls, count] : sizes)
    for (int i = 0; i < count; ++i) {
      corpus.sample_ids.push_back(cls + std::to_string(i));
      corpus.class_labels.push_back(cls);
    }

  const ClassIndex index = build_class_index(corpus);
  const auto folds = rare_cv_folds(index, 99);
  REQUIRE(folds.size() == 10);

  std::set<std::size_t> seen;
  for (const auto& fold : folds)
    for (std::size_t row : fold) CHECK(seen.insert(row).second);
  CHECK(seen.size() == total);

  for (std::size_t c = 0; c < index.num_classes(); ++c) {
    std::size_t min_occ = SIZE_MAX, max_occ = 0;
    for (const auto& fold : folds) {
      std::size_t occ = 0;
      for (std::size_t row : fold)
        if (corpus.class_labels[row] == index.classes[c]) ++occ;
      min_occ = std::min(min_occ, occ);
      max_occ = std::max(max_occ, occ);
    }
    CHECK(max_occ - min_occ <= 1);
  }
}

TEST_CASE("rare CV on perfect clusters reaches top-1 = 1 in every fold") {
  SynthSpec spec;
  spec.n_classes = 10;
  spec.dim = 6;
  spec.zipf_s = 0.0;
  spec.count_min = 10;
  spec.count_max = 10;
  spec.noise_sigma = 0.0;
  spec.seed = 21;
  const EmbeddingCorpus corpus = gen_synthetic_corpus(spec).corpus;
  const SplitManifest manifest = all_rare_manifest(corpus);

  const ProtoModel identity = make_identity_model(6);
  const RetrievalReport report = rare_cv_protocol(identity, corpus, manifest, 4);
  CHECK(report.protocol == "rare_cv");
  REQUIRE(report.per_fold.has_value());
  REQUIRE(report.per_fold->size() == 10);
  CHECK(report.topk.at(1) == 1.0);
  for (const FoldReport& fold : *report.per_fold) {
    CHECK(fold.n_queries == 10); // one sample of each class per fold
    CHECK(fold.topk.at(1) == 1.0);
  }
}

TEST_CASE("singleton rare classes are distractors, never queries") {
  EmbeddingCorpus corpus;
  corpus.sample_ids = {"solo", "p0", "p1", "p2", "p3"};
  corpus.class_labels = {"lone", "pair", "pair", "pair", "pair"};
  corpus.vectors = Matrix(5, 2);
  for (std::size_t i = 0; i < 5; ++i) corpus.vectors(i, 0) = 1.0 + 0.01 * i;

  const SplitManifest manifest = all_rare_manifest(corpus);
  const ProtoModel identity = make_identity_model(2);
  const RetrievalReport report = rare_cv_protocol(identity, corpus, manifest, 7);

  std::size_t total_queries = 0;
  for (const FoldReport& fold : *report.per_fold) total_queries += fold.n_queries;
  CHECK(total_queries == 4); // the four "pair" samples; "lone" never queries
}

TEST_CASE("rare CV without a pair-able class is infeasible") {
  EmbeddingCorpus corpus;
  corpus.sample_ids = {"a0", "b0"};
  corpus.class_labels = {"a", "b"};
  corpus.vectors = Matrix(2, 2, 1.0);
  const SplitManifest manifest = all_rare_manifest(corpus);
  const ProtoModel identity = make_identity_model(2);
  CHECK_THROWS_WITH_AS(rare_cv_protocol(identity, corpus, manifest, 1),
                       doctest::Contains("rare CV infeasible"), InfeasibleError);

  SplitManifest empty;
  empty.role.assign(2, Role::train);
  empty.group.assign(2, Group::frequent);
  CHECK_THROWS_AS(rare_cv_protocol(identity, corpus, empty, 1), InfeasibleError);
}

TEST_CASE("fuse concatenates per-encoder normalized halves") {
  EmbeddingCorpus left;
  left.sample_ids = {"s"};
  left.class_labels = {"x"};
  left.vectors = Matrix(1, 2);
  left.vectors(0, 0) = 1.0;

  EmbeddingCorpus right = left;
  right.vectors = Matrix(1, 2);
  right.vectors(0, 1) = 1.0;

  const std::vector<const EmbeddingCorpus*> parts{&left, &right};
  const EmbeddingCorpus fused = fuse_embeddings(parts);
  CHECK(fused.dim() == 4);
  CHECK(fused.vectors(0, 0) == 1.0);
  CHECK(fused.vectors(0, 1) == 0.0);
  CHECK(fused.vectors(0, 2) == 0.0);
  CHECK(fused.vectors(0, 3) == 1.0);
}

TEST_CASE("fused cosine equals the mean of per-encoder cosines") {
  const EmbeddingCorpus a = oracles::random_corpus(100, 30, 5, 4);
  EmbeddingCorpus b = oracles::random_corpus(101, 30, 7, 4);
  b.sample_ids = a.sample_ids;
  b.class_labels = a.class_labels;

  const std::vector<const EmbeddingCorpus*> parts{&a, &b};
  const EmbeddingCorpus fused = fuse_embeddings(parts);

  const auto rows_a = oracles::to_rows(a.vectors);
  const auto rows_b = oracles::to_rows(b.vectors);
  const auto rows_f = oracles::to_rows(fused.vectors);
  for (std::size_t i = 0; i < 30; i += 3) {
    for (std::size_t j = i + 1; j < 30; j += 5) {
      const double cos_a = 1.0 - oracles::cosine_distance(rows_a[i], rows_a[j]);
      const double cos_b = 1.0 - oracles::cosine_distance(rows_b[i], rows_b[j]);
      const double cos_f = 1.0 - oracles::cosine_distance(rows_f[i], rows_f[j]);
      CHECK(std::abs(cos_f - 0.5 * (cos_a + cos_b)) < 1e-12);
    }
  }
}

TEST_CASE("fusing a corpus with itself preserves rankings") {
  const EmbeddingCorpus corpus = oracles::random_corpus(200, 40, 6, 5);
  const std::vector<const EmbeddingCorpus*> parts{&corpus, &corpus};
  const EmbeddingCorpus fused = fuse_embeddings(parts);
  CHECK(fused.dim() == 12);

  std::mt19937_64 gen(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> query(6);
    for (double& v : query) v = normal(gen);
    std::vector<double> fused_query = query;
    fused_query.insert(fused_query.end(), query.begin(), query.end());
    CHECK(rank_classes(corpus.vectors, corpus.class_labels, query) ==
          rank_classes(fused.vectors, fused.class_labels, fused_query));
  }
}

TEST_CASE("fuse rejects mismatched ids listing the offenders") {
  EmbeddingCorpus a = oracles::random_corpus(300, 8, 3, 2);
  EmbeddingCorpus b = a;
  b.sample_ids[2] = "stranger2";
  b.sample_ids[5] = "stranger5";

  const std::vector<const EmbeddingCorpus*> parts{&a, &b};
  try {
    fuse_embeddings(parts);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("r2") != std::string::npos);
    CHECK(msg.find("r5") != std::string::npos);
  }

  const std::vector<const EmbeddingCorpus*> one{&a};
  CHECK_THROWS_AS(fuse_embeddings(one), std::invalid_argument);
}

TEST_CASE("global scaling changes no ranking or report") {
  const EmbeddingCorpus corpus = oracles::random_corpus(41, 60, 6, 5);
  SplitManifest manifest;
  manifest.role.assign(corpus.size(), std::nullopt);
  manifest.group.assign(corpus.size(), std::nullopt);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    manifest.role[i] = (i % 3 == 0) ? Role::test : Role::gallery;
    manifest.group[i] = Group::frequent;
  }
  const ProtoModel identity = make_identity_model(6);
  const RetrievalReport base = frequent_retrieval_protocol(identity, corpus, manifest);

  for (double lambda : {0.01, 3.7, 1000.0}) {
    EmbeddingCorpus scaled = corpus;
    for (double& v : scaled.vectors.flat()) v *= lambda;
    const RetrievalReport report =
        frequent_retrieval_protocol(identity, scaled, manifest);
    CHECK(report.topk == base.topk);
  }
}

TEST_CASE("report serialization has stable keys and a flat CSV row") {
  RetrievalReport report;
  report.protocol = "frequent_retrieval";
  report.topk = {{1, 0.5}, {5, 0.75}, {10, 0.75}, {30, 1.0}};
  report.n_queries = 4;
  report.metadata.emplace_back("aggregation", "min");

  const std::string json = report_to_json(report);
  CHECK(json.find("\"protocol\": \"frequent_retrieval\"") != std::string::npos);
  CHECK(json.find("\"1\": 0.5") != std::string::npos);
  CHECK(json.find("\"n_queries\": 4") != std::string::npos);
  // key order is protocol, topk, n_queries, metadata
  CHECK(json.find("\"protocol\"") < json.find("\"topk\""));
  CHECK(json.find("\"topk\"") < json.find("\"n_queries\""));
  CHECK(json.find("\"n_queries\"") < json.find("\"metadata\""));

  CHECK(report_to_csv(report, true) ==
        "protocol,n_queries,top1,top5,top10,top30\n"
        "frequent_retrieval,4,0.5,0.75,0.75,1\n");
  CHECK(report_to_csv(report, false) == "frequent_retrieval,4,0.5,0.75,0.75,1\n");
}

TEST_CASE("validation_top1 scores val queries against the train gallery") {
  SynthSpec spec;
  spec.n_classes = 5;
  spec.dim = 6;
  spec.zipf_s = 0.0;
  spec.count_min = 10;
  spec.count_max = 10;
  spec.noise_sigma = 0.0;
  spec.seed = 8;
  const EmbeddingCorpus corpus = gen_synthetic_corpus(spec).corpus;
  const SplitManifest manifest = synth_manifest(corpus, 1, 3);

  const ProtoModel identity = make_identity_model(6);
  const double top1 = validation_top1(identity, corpus,
                                      manifest.rows_with(Role::train),
                                      manifest.rows_with(Role::val));
  CHECK(top1 == 1.0);
}
