#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "core/error.hpp"
#include "core/protohead.hpp"
#include "oracles.hpp"

using namespace protoret;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

// K classes of (n_shot + n_query) rows each, class-major layout, plus the
// FewShotTask pointing into it.
struct TaskFixture {
  EmbeddingCorpus corpus;
  FewShotTask task;
};

TaskFixture random_task(std::uint64_t seed, std::size_t k, std::size_t n_shot,
                        std::size_t n_query, std::size_t dim) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  TaskFixture fixture;
  const std::size_t per_class = n_shot + n_query;
  fixture.corpus.vectors = Matrix(k * per_class, dim);
  for (std::size_t c = 0; c < k; ++c) {
    const std::string cls = "t" + std::to_string(c);
    fixture.task.classes.push_back(cls);
    std::vector<std::size_t> support, query;
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = c * per_class + i;
      fixture.corpus.sample_ids.push_back(cls + "_" + std::to_string(i));
      fixture.corpus.class_labels.push_back(cls);
      auto r = fixture.corpus.vectors.row(row);
      for (double& v : r) v = normal(gen);
      (i < n_shot ? support : query).push_back(row);
    }
    fixture.task.support.push_back(support);
    fixture.task.query.push_back(query);
  }
  return fixture;
}

ProtoModel random_model(std::uint64_t seed, std::size_t d_in, std::size_t d_out) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> tau_dist(0.5, 5.0);
  ProtoModel model;
  model.W = Matrix(d_in, d_out);
  for (double& v : model.W.flat()) v = normal(gen);
  model.tau = tau_dist(gen);
  return model;
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

} // namespace

TEST_CASE("adapt applies the linear map") {
  ProtoModel identity = make_identity_model(3);
  const Matrix input = from_rows({{1.0, 2.0, 3.0}});
  CHECK(adapt(identity, input) == input);

  ProtoModel doubled = make_identity_model(2);
  doubled.W(0, 0) = 2.0;
  doubled.W(1, 1) = 2.0;
  const Matrix out = adapt(doubled, from_rows({{1.0, 3.0}}));
  CHECK(out(0, 0) == 2.0);
  CHECK(out(0, 1) == 6.0);

  CHECK_THROWS_AS(adapt(identity, from_rows({{1.0, 2.0}})), std::invalid_argument);
}

TEST_CASE("adapt is linear") {
  const ProtoModel model = random_model(4, 5, 3);
  std::mt19937_64 gen(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(1, 5), y(1, 5);
  for (double& v : x.flat()) v = normal(gen);
  for (double& v : y.flat()) v = normal(gen);
  const double alpha = 0.37, beta = -2.25;

  Matrix combo(1, 5);
  for (std::size_t j = 0; j < 5; ++j) combo(0, j) = alpha * x(0, j) + beta * y(0, j);

  const Matrix lhs = adapt(model, combo);
  const Matrix ax = adapt(model, x), ay = adapt(model, y);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(std::abs(lhs(0, j) - (alpha * ax(0, j) + beta * ay(0, j))) < 1e-12);
}

TEST_CASE("compute_centroids averages each group") {
  const Matrix stacked = from_rows({{1, 0}, {0, 1}, {5, 5}, {1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> sizes{2, 1, 3};
  const Matrix centroids = compute_centroids(stacked, sizes);
  CHECK(centroids(0, 0) == 0.5);
  CHECK(centroids(0, 1) == 0.5);
  CHECK(centroids(1, 0) == 5.0); // single vector group is the identity
  CHECK(centroids(2, 0) == 3.0);
  CHECK(centroids(2, 1) == 4.0);

  const std::vector<std::size_t> with_empty{2, 0};
  CHECK_THROWS_WITH_AS(compute_centroids(stacked, with_empty),
                       doctest::Contains("empty group"), std::invalid_argument);
}

TEST_CASE("cosine_logits on orthonormal fixtures") {
  const Matrix queries = from_rows({{1, 0}});
  const Matrix centroids = from_rows({{1, 0}, {0, 1}});

  Matrix logits = cosine_logits(queries, centroids, 1.0);
  CHECK(logits(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(logits(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

  logits = cosine_logits(queries, centroids, 10.0);
  CHECK(logits(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(logits(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

  // cosine is scale invariant in the query
  const Matrix scaled = from_rows({{5, 0}});
  const Matrix scaled_logits = cosine_logits(scaled, centroids, 10.0);
  CHECK(scaled_logits(0, 0) == doctest::Approx(10.0).epsilon(1e-12));

  const Matrix zero = from_rows({{0, 0}});
  CHECK_THROWS_WITH_AS(cosine_logits(zero, centroids, 1.0),
                       doctest::Contains("zero-norm query row 0"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cosine_logits(queries, zero, 1.0),
                       doctest::Contains("zero-norm centroid row 0"),
                       std::invalid_argument);
}

TEST_CASE("softmax_rows closed forms") {
  Matrix probs = softmax_rows(from_rows({{1, 0}}));
  CHECK(probs(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(probs(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));

  probs = softmax_rows(from_rows({{10, 0}}));
  CHECK(probs(0, 0) == doctest::Approx(0.99995).epsilon(1e-5));
  CHECK(probs(0, 1) == doctest::Approx(0.00005).epsilon(1e-1));

  probs = softmax_rows(from_rows({{3.5, 3.5, 3.5, 3.5}}));
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(probs(0, c) == doctest::Approx(0.25).epsilon(1e-12));

  // rows always sum to one
  probs = softmax_rows(from_rows({{100, -100, 3}, {1e8, 0, -1e8}}));
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) sum += probs(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("identical centroids give uniform probabilities and loss ln K") {
  // 10 classes whose support is one shared vector; queries arbitrary.
  const std::size_t k = 10, dim = 4;
  TaskFixture fixture;
  fixture.corpus.vectors = Matrix(2 * k, dim);
  std::mt19937_64 gen(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < k; ++c) {
    const std::string cls = "u" + std::to_string(c);
    fixture.task.classes.push_back(cls);
    const std::size_t support_row = 2 * c, query_row = 2 * c + 1;
    fixture.corpus.sample_ids.push_back(cls + "_s");
    fixture.corpus.sample_ids.push_back(cls + "_q");
    fixture.corpus.class_labels.push_back(cls);
    fixture.corpus.class_labels.push_back(cls);
    fixture.corpus.vectors(support_row, 0) = 1.0; // shared support vector e0
    auto q = fixture.corpus.vectors.row(query_row);
    for (double& v : q) v = normal(gen);
    fixture.task.support.push_back({support_row});
    fixture.task.query.push_back({query_row});
  }

  const ProtoModel model = make_identity_model(dim);
  const TaskLossResult result = task_loss_and_grad(model, fixture.task, fixture.corpus);
  CHECK(result.loss == doctest::Approx(2.302585).epsilon(1e-6));
  for (std::size_t r = 0; r < result.query_probs.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c)
      CHECK(result.query_probs(r, c) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("analytic gradients match finite differences on 20 random tasks") {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const TaskFixture fixture = random_task(1000 + trial, 3, 2, 2, 5);
    const ProtoModel model = random_model(2000 + trial, 5, 5);

    const TaskLossResult analytic =
        task_loss_and_grad(model, fixture.task, fixture.corpus);

    std::vector<double> params(model.W.flat().begin(), model.W.flat().end());
    params.push_back(model.tau);
    const auto loss_fn = [&](std::span<const double> p) {
      ProtoModel m;
      m.W = Matrix(5, 5);
      std::copy(p.begin(), p.end() - 1, m.W.flat().begin());
      m.tau = p.back();
      return task_loss_and_grad(m, fixture.task, fixture.corpus).loss;
    };
    const std::vector<double> numeric = numeric_gradient(loss_fn, params, 1e-6);

    for (std::size_t i = 0; i + 1 < params.size(); ++i)
      worst = std::max(worst,
                       relative_error(analytic.grad_W.data()[i], numeric[i]));
    worst = std::max(worst, relative_error(analytic.grad_tau, numeric.back()));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("perfectly separated task has near-zero loss") {
  // orthogonal class means, zero noise, W = I, tau = 10
  const std::size_t k = 3, dim = 5;
  TaskFixture fixture;
  fixture.corpus.vectors = Matrix(2 * k, dim);
  for (std::size_t c = 0; c < k; ++c) {
    const std::string cls = "p" + std::to_string(c);
    fixture.task.classes.push_back(cls);
    fixture.corpus.sample_ids.push_back(cls + "_s");
    fixture.corpus.sample_ids.push_back(cls + "_q");
    fixture.corpus.class_labels.push_back(cls);
    fixture.corpus.class_labels.push_back(cls);
    fixture.corpus.vectors(2 * c, c) = 1.0;
    fixture.corpus.vectors(2 * c + 1, c) = 1.0;
    fixture.task.support.push_back({2 * c});
    fixture.task.query.push_back({2 * c + 1});
  }
  const ProtoModel model = make_identity_model(dim, 10.0);
  const TaskLossResult result = task_loss_and_grad(model, fixture.task, fixture.corpus);
  CHECK(result.loss < 0.01);
}

TEST_CASE("episode loss is the mean of task losses") {
  const TaskFixture a = random_task(51, 3, 2, 2, 4);
  const ProtoModel model = random_model(52, 4, 4);

  Episode single;
  single.tasks.push_back(a.task);
  const TaskLossResult task_result = task_loss_and_grad(model, a.task, a.corpus);
  const TaskLossResult episode_result = episode_loss_and_grad(model, single, a.corpus);
  CHECK(episode_result.loss == task_result.loss);
  CHECK(episode_result.grad_tau == task_result.grad_tau);
  CHECK(episode_result.grad_W == task_result.grad_W);

  Episode twin;
  twin.tasks = {a.task, a.task};
  const TaskLossResult twin_result = episode_loss_and_grad(model, twin, a.corpus);
  CHECK(twin_result.loss == doctest::Approx(task_result.loss).epsilon(1e-15));
  for (std::size_t i = 0; i < twin_result.grad_W.size(); ++i)
    CHECK(std::abs(twin_result.grad_W.data()[i] - task_result.grad_W.data()[i]) <
          1e-15);
}

TEST_CASE("four-task episode averages the per-task results") {
  // one corpus, four different tasks over it
  const TaskFixture base = random_task(61, 3, 2, 2, 4);
  Episode episode;
  std::vector<TaskFixture> fixtures;
  for (std::uint64_t t = 0; t < 4; ++t) {
    TaskFixture f = random_task(61, 3, 2, 2, 4); // same corpus content
    // rotate class blocks to vary the tasks
    std::rotate(f.task.classes.begin(), f.task.classes.begin() + t % 3,
                f.task.classes.end());
    std::rotate(f.task.support.begin(), f.task.support.begin() + t % 3,
                f.task.support.end());
    std::rotate(f.task.query.begin(), f.task.query.begin() + t % 3,
                f.task.query.end());
    episode.tasks.push_back(f.task);
  }
  const ProtoModel model = random_model(62, 4, 4);
  const TaskLossResult whole = episode_loss_and_grad(model, episode, base.corpus);

  double mean_loss = 0.0;
  for (const auto& task : episode.tasks)
    mean_loss += task_loss_and_grad(model, task, base.corpus).loss;
  mean_loss /= 4.0;
  CHECK(std::abs(whole.loss - mean_loss) < 1e-12);
}

TEST_CASE("probability rows sum to one and live in [0,1]") {
  const TaskFixture fixture = random_task(71, 4, 3, 2, 6);
  const ProtoModel model = random_model(72, 6, 6);
  const TaskLossResult result = task_loss_and_grad(model, fixture.task, fixture.corpus);
  for (std::size_t r = 0; r < result.query_probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < result.query_probs.cols(); ++c) {
      const double p = result.query_probs(r, c);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("global positive scaling leaves the task computation unchanged") {
  const TaskFixture fixture = random_task(81, 3, 2, 2, 5);
  const ProtoModel model = random_model(82, 5, 5);
  const TaskLossResult base = task_loss_and_grad(model, fixture.task, fixture.corpus);

  for (double lambda : {0.01, 3.7, 1000.0}) {
    TaskFixture scaled = fixture;
    for (double& v : scaled.corpus.vectors.flat()) v *= lambda;
    const TaskLossResult result =
        task_loss_and_grad(model, scaled.task, scaled.corpus);
    CHECK(std::abs(result.loss - base.loss) < 1e-9);
    for (std::size_t i = 0; i < base.query_probs.size(); ++i)
      CHECK(std::abs(result.query_probs.data()[i] - base.query_probs.data()[i]) <
            1e-9);
  }
}

TEST_CASE("task loss is permutation equivariant with identity adapter") {
  const TaskFixture fixture = random_task(91, 4, 2, 2, 5);
  const ProtoModel model = make_identity_model(5, 7.0);
  const TaskLossResult base = task_loss_and_grad(model, fixture.task, fixture.corpus);

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  FewShotTask permuted;
  for (std::size_t slot : perm) {
    permuted.classes.push_back(fixture.task.classes[slot]);
    permuted.support.push_back(fixture.task.support[slot]);
    permuted.query.push_back(fixture.task.query[slot]);
  }
  const TaskLossResult shuffled =
      task_loss_and_grad(model, permuted, fixture.corpus);
  CHECK(std::abs(shuffled.loss - base.loss) < 1e-12);

  const std::size_t q = 2; // queries per class
  for (std::size_t new_slot = 0; new_slot < perm.size(); ++new_slot) {
    const std::size_t old_slot = perm[new_slot];
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t new_col = 0; new_col < perm.size(); ++new_col)
        CHECK(std::abs(shuffled.query_probs(new_slot * q + i, new_col) -
                       base.query_probs(old_slot * q + i, perm[new_col])) < 1e-12);
  }
}

TEST_CASE("classifier loss closed forms and finite differences") {
  ClassifierModel model;
  model.class_order = {"a", "b", "c", "d"};
  model.W = Matrix(3, 4);
  model.b.assign(4, 0.0);

  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix batch(6, 3);
  for (double& v : batch.flat()) v = normal(gen);
  std::vector<std::string> labels{"a", "b", "c", "d", "a", "b"};

  // zero weights: uniform logits, loss = ln 4
  const ClassifierLossResult zero = classifier_loss_and_grad(model, batch, labels);
  CHECK(zero.loss == doctest::Approx(1.386294).epsilon(1e-6));

  CHECK_THROWS_WITH_AS(
      classifier_loss_and_grad(model, batch,
                               std::vector<std::string>{"a", "b", "c", "x", "a", "b"}),
      doctest::Contains("unknown label x"), std::invalid_argument);

  // finite differences over W and b
  for (double& v : model.W.flat()) v = normal(gen);
  for (double& v : model.b) v = 0.3 * normal(gen);
  const ClassifierLossResult analytic = classifier_loss_and_grad(model, batch, labels);

  std::vector<double> params(model.W.flat().begin(), model.W.flat().end());
  params.insert(params.end(), model.b.begin(), model.b.end());
  const auto loss_fn = [&](std::span<const double> p) {
    ClassifierModel m = model;
    std::copy(p.begin(), p.begin() + 12, m.W.flat().begin());
    std::copy(p.begin() + 12, p.end(), m.b.begin());
    return classifier_loss_and_grad(m, batch, labels).loss;
  };
  const std::vector<double> numeric = numeric_gradient(loss_fn, params, 1e-6);
  double worst = 0.0;
  for (std::size_t i = 0; i < 12; ++i)
    worst = std::max(worst, relative_error(analytic.grad_W.data()[i], numeric[i]));
  for (std::size_t i = 0; i < 4; ++i)
    worst = std::max(worst, relative_error(analytic.grad_b[i], numeric[12 + i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("saturated classifier drives the loss to zero") {
  ClassifierModel model;
  model.class_order = {"a", "b"};
  model.W = Matrix(2, 2);
  model.b = {20.0, 0.0};
  Matrix batch(1, 2);
  batch(0, 0) = 0.0;
  batch(0, 1) = 0.0;
  const std::vector<std::string> labels{"a"};
  const ClassifierLossResult result = classifier_loss_and_grad(model, batch, labels);
  CHECK(result.loss < 1e-8);
}

TEST_CASE("numeric_gradient on scalar calculus examples") {
  const auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> at3{3.0};
  CHECK(numeric_gradient(square, at3, 1e-6)[0] == doctest::Approx(6.0).epsilon(1e-6));

  const auto product = [](std::span<const double> p) { return p[0] * p[1]; };
  const std::vector<double> at25{2.0, 5.0};
  const auto grad = numeric_gradient(product, at25, 1e-6);
  CHECK(grad[0] == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(grad[1] == doctest::Approx(2.0).epsilon(1e-6));

  CHECK_THROWS_AS(numeric_gradient(square, at3, 0.0), std::invalid_argument);
}

TEST_CASE("model factories and invariants") {
  Rng rng(11);
  const ProtoModel ortho = make_orthonormal_model(6, 3, rng);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double dot_ab = 0.0;
      for (std::size_t r = 0; r < 6; ++r) dot_ab += ortho.W(r, a) * ortho.W(r, b);
      CHECK(std::abs(dot_ab - (a == b ? 1.0 : 0.0)) < 1e-10);
    }
  CHECK_THROWS_AS(make_orthonormal_model(3, 6, rng), std::invalid_argument);

  ProtoModel bad = make_identity_model(2);
  bad.tau = 0.0;
  CHECK_THROWS_AS(validate_model(bad), std::invalid_argument);
}

TEST_CASE("proto checkpoint round-trips exactly") {
  namespace fs = std::filesystem;
  const ProtoModel model = random_model(5150, 4, 3);
  const auto path = (fs::temp_directory_path() / "protoret_model.ckpt").string();
  save_model(model, path);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "protoret-model,v1,4,3");

  const ProtoModel loaded = load_model(path);
  CHECK(loaded.tau == model.tau);
  CHECK(loaded.W == model.W);
  CHECK(checkpoint_kind(path) == CheckpointKind::proto);
}

TEST_CASE("classifier checkpoint round-trips exactly") {
  namespace fs = std::filesystem;
  ClassifierModel model;
  model.class_order = {"alpha", "beta", "gamma"};
  model.W = Matrix(2, 3);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : model.W.flat()) v = normal(gen);
  model.b = {0.25, -1.5, normal(gen)};

  const auto path = (fs::temp_directory_path() / "protoret_classifier.ckpt").string();
  save_classifier(model, path);
  const ClassifierModel loaded = load_classifier(path);
  CHECK(loaded.class_order == model.class_order);
  CHECK(loaded.W == model.W);
  CHECK(loaded.b == model.b);
  CHECK(checkpoint_kind(path) == CheckpointKind::classifier);

  CHECK_THROWS_AS(load_model(path), FormatError); // wrong kind
}
