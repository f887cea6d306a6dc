#include "core/protohead.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "core/error.hpp"

namespace protoret {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

double parse_double(const std::string& field, const std::string& path) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw FormatError(path + ": invalid float \"" + field + "\"");
  return value;
}

} // namespace

ProtoModel make_identity_model(std::size_t dim, double tau) {
  return ProtoModel{Matrix::identity(dim), tau};
}

ProtoModel make_orthonormal_model(std::size_t d_in, std::size_t d_out, Rng& rng,
                                  double tau) {
  if (d_out > d_in)
    throw std::invalid_argument(
        "orthonormal adapter init requires d_out <= d_in");
  Matrix w(d_in, d_out);
  for (std::size_t c = 0; c < d_out; ++c) {
    // Gram-Schmidt against previous columns.
    std::vector<double> col(d_in);
    double norm = 0.0;
    do {
      for (auto& v : col) v = rng.gaussian();
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t r = 0; r < d_in; ++r) proj += col[r] * w(r, p);
        for (std::size_t r = 0; r < d_in; ++r) col[r] -= proj * w(r, p);
      }
      norm = 0.0;
      for (double v : col) norm += v * v;
      norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (std::size_t r = 0; r < d_in; ++r) w(r, c) = col[r] / norm;
  }
  return ProtoModel{std::move(w), tau};
}

ProtoModel make_random_model(std::size_t d_in, std::size_t d_out, Rng& rng,
                             double tau) {
  Matrix w(d_in, d_out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (double& v : w.flat()) v = scale * rng.gaussian();
  return ProtoModel{std::move(w), tau};
}

void validate_model(const ProtoModel& model) {
  for (double v : model.W.flat())
    if (!std::isfinite(v)) throw std::invalid_argument("model: non-finite W entry");
  if (!std::isfinite(model.tau) || model.tau <= 0.0)
    throw std::invalid_argument("model: tau must be finite and > 0");
}

Matrix adapt(const ProtoModel& model, const Matrix& vectors) {
  if (vectors.cols() != model.W.rows())
    throw std::invalid_argument(
        "adapt: vectors have dim " + std::to_string(vectors.cols()) +
        " but the adapter expects " + std::to_string(model.W.rows()));
  return matmul(vectors, model.W);
}

Matrix compute_centroids(const Matrix& stacked,
                         std::span<const std::size_t> group_sizes) {
  std::size_t total = 0;
  for (std::size_t s : group_sizes) {
    if (s == 0) throw std::invalid_argument("compute_centroids: empty group");
    total += s;
  }
  if (total != stacked.rows())
    throw std::invalid_argument("compute_centroids: group sizes do not cover rows");

  Matrix centroids(group_sizes.size(), stacked.cols());
  std::size_t row = 0;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    auto out = centroids.row(g);
    for (std::size_t i = 0; i < group_sizes[g]; ++i, ++row) {
      const auto in = stacked.row(row);
      for (std::size_t d = 0; d < in.size(); ++d) out[d] += in[d];
    }
    const double inv = 1.0 / static_cast<double>(group_sizes[g]);
    for (double& v : out) v *= inv;
  }
  return centroids;
}

Matrix cosine_logits(const Matrix& queries, const Matrix& centroids, double tau) {
  if (queries.cols() != centroids.cols())
    throw std::invalid_argument("cosine_logits: dimension mismatch");

  std::vector<double> qnorm(queries.rows()), cnorm(centroids.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    qnorm[i] = std::sqrt(norm2(queries.row(i)));
    if (qnorm[i] == 0.0)
      throw std::invalid_argument("zero-norm query row " + std::to_string(i));
  }
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    cnorm[k] = std::sqrt(norm2(centroids.row(k)));
    if (cnorm[k] == 0.0)
      throw std::invalid_argument("zero-norm centroid row " + std::to_string(k));
  }

  Matrix logits(queries.rows(), centroids.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i)
    for (std::size_t k = 0; k < centroids.rows(); ++k)
      logits(i, k) =
          tau * dot(queries.row(i), centroids.row(k)) / (qnorm[i] * cnorm[k]);
  return logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    auto out = probs.row(i);
    double maxv = -std::numeric_limits<double>::infinity();
    for (double v : in) maxv = std::max(maxv, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - maxv);
      sum += out[j];
    }
    for (double& v : out) v /= sum;
  }
  return probs;
}

namespace {

struct GatheredTask {
  Matrix support_inputs; // (K·N)×D_in, class-major
  Matrix query_inputs;   // (K·Q)×D_in, class-major
  std::size_t n_way = 0;
  std::size_t n_shot = 0;
  std::size_t n_query = 0;
};

GatheredTask gather_task(const FewShotTask& task, const EmbeddingCorpus& corpus) {
  const std::size_t k = task.classes.size();
  if (k == 0 || task.support.size() != k || task.query.size() != k)
    throw std::invalid_argument("task: classes/support/query sizes disagree");
  const std::size_t n_shot = task.support[0].size();
  const std::size_t n_query = task.query[0].size();
  if (n_shot == 0 || n_query == 0)
    throw std::invalid_argument("task: empty support or query group");
  for (std::size_t c = 0; c < k; ++c)
    if (task.support[c].size() != n_shot || task.query[c].size() != n_query)
      throw std::invalid_argument("task: ragged support/query groups");

  GatheredTask g;
  g.n_way = k;
  g.n_shot = n_shot;
  g.n_query = n_query;
  g.support_inputs = Matrix(k * n_shot, corpus.dim());
  g.query_inputs = Matrix(k * n_query, corpus.dim());
  auto copy_row = [&](Matrix& dst, std::size_t dst_row, std::size_t src_row) {
    if (src_row >= corpus.size())
      throw std::invalid_argument("task: corpus row out of range");
    const auto src = corpus.vectors.row(src_row);
    std::copy(src.begin(), src.end(), dst.row(dst_row).begin());
  };
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n_shot; ++i)
      copy_row(g.support_inputs, c * n_shot + i, task.support[c][i]);
    for (std::size_t i = 0; i < n_query; ++i)
      copy_row(g.query_inputs, c * n_query + i, task.query[c][i]);
  }
  return g;
}

} // namespace

TaskLossResult task_loss_and_grad(const ProtoModel& model, const FewShotTask& task,
                                  const EmbeddingCorpus& corpus) {
  const GatheredTask g = gather_task(task, corpus);
  const std::size_t k = g.n_way;
  const std::size_t total_queries = k * g.n_query;
  const std::size_t d_out = model.dim_out();

  const Matrix z_support = adapt(model, g.support_inputs);
  const Matrix z_query = adapt(model, g.query_inputs);

  const std::vector<std::size_t> sizes(k, g.n_shot);
  const Matrix centroids = compute_centroids(z_support, sizes);

  // Cosine similarities (tau = 1), then logits = tau * cos.
  const Matrix cos = cosine_logits(z_query, centroids, 1.0);
  Matrix logits(total_queries, k);
  for (std::size_t i = 0; i < cos.size(); ++i)
    logits.data()[i] = model.tau * cos.data()[i];

  TaskLossResult result;
  result.query_probs = softmax_rows(logits);

  // Loss from logits with log-sum-exp, not from the probabilities, so a
  // saturated softmax still yields a finite loss.
  double loss = 0.0;
  for (std::size_t j = 0; j < total_queries; ++j) {
    const std::size_t truth = j / g.n_query;
    const auto row = logits.row(j);
    double maxv = -std::numeric_limits<double>::infinity();
    for (double v : row) maxv = std::max(maxv, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - maxv);
    loss -= row[truth] - maxv - std::log(sum);
  }
  const double inv_queries = 1.0 / static_cast<double>(total_queries);
  result.loss = loss * inv_queries;

  // dL/dlogit = (p - onehot) / (K·Q); dL/dtau = sum dL/dlogit · cos.
  Matrix grad_logits(total_queries, k);
  double grad_tau = 0.0;
  for (std::size_t j = 0; j < total_queries; ++j) {
    const std::size_t truth = j / g.n_query;
    for (std::size_t c = 0; c < k; ++c) {
      double gl = result.query_probs(j, c) * inv_queries;
      if (c == truth) gl -= inv_queries;
      grad_logits(j, c) = gl;
      grad_tau += gl * cos(j, c);
    }
  }
  result.grad_tau = grad_tau;

  // Unit-normalized copies for the cosine backward pass.
  std::vector<double> qnorm(total_queries), cnorm(k);
  Matrix q_hat = z_query, c_hat = centroids;
  for (std::size_t j = 0; j < total_queries; ++j) {
    qnorm[j] = std::sqrt(norm2(q_hat.row(j)));
    for (double& v : q_hat.row(j)) v /= qnorm[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    cnorm[c] = std::sqrt(norm2(c_hat.row(c)));
    for (double& v : c_hat.row(c)) v /= cnorm[c];
  }

  // d cos(q,c)/dq = (c_hat - cos·q_hat)/|q|, and symmetrically for c.
  Matrix grad_zq(total_queries, d_out);
  Matrix grad_centroids(k, d_out);
  for (std::size_t j = 0; j < total_queries; ++j) {
    auto gq = grad_zq.row(j);
    double coef_q = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double gs = model.tau * grad_logits(j, c);
      const auto ch = c_hat.row(c);
      for (std::size_t d = 0; d < d_out; ++d) gq[d] += gs * ch[d];
      coef_q += gs * cos(j, c);
      auto gc = grad_centroids.row(c);
      const auto qh = q_hat.row(j);
      for (std::size_t d = 0; d < d_out; ++d)
        gc[d] += gs * (qh[d] - cos(j, c) * ch[d]) / cnorm[c];
    }
    const auto qh = q_hat.row(j);
    for (std::size_t d = 0; d < d_out; ++d)
      gq[d] = (gq[d] - coef_q * qh[d]) / qnorm[j];
  }

  // Centroid mean spreads its gradient uniformly over the support rows;
  // then grad_W = X_queryᵀ·dZq + X_supportᵀ·dZs.
  result.grad_W = Matrix(model.dim_in(), d_out);
  auto accumulate_outer = [&](std::span<const double> x, std::span<const double> gz) {
    for (std::size_t r = 0; r < x.size(); ++r) {
      if (x[r] == 0.0) continue;
      auto grow = result.grad_W.row(r);
      for (std::size_t d = 0; d < gz.size(); ++d) grow[d] += x[r] * gz[d];
    }
  };
  for (std::size_t j = 0; j < total_queries; ++j)
    accumulate_outer(g.query_inputs.row(j), grad_zq.row(j));
  const double inv_shot = 1.0 / static_cast<double>(g.n_shot);
  std::vector<double> gz(d_out);
  for (std::size_t c = 0; c < k; ++c) {
    const auto gc = grad_centroids.row(c);
    for (std::size_t d = 0; d < d_out; ++d) gz[d] = gc[d] * inv_shot;
    for (std::size_t i = 0; i < g.n_shot; ++i)
      accumulate_outer(g.support_inputs.row(c * g.n_shot + i), gz);
  }
  return result;
}

TaskLossResult episode_loss_and_grad(const ProtoModel& model, const Episode& episode,
                                     const EmbeddingCorpus& corpus) {
  if (episode.tasks.empty())
    throw std::invalid_argument("episode has no tasks");

  TaskLossResult total;
  std::vector<Matrix> probs;
  probs.reserve(episode.tasks.size());
  for (const FewShotTask& task : episode.tasks) {
    if (task.classes.size() != episode.tasks.front().classes.size())
      throw std::invalid_argument("episode mixes tasks of different n_way");
    TaskLossResult r = task_loss_and_grad(model, task, corpus);
    if (total.grad_W.size() == 0) {
      total.grad_W = Matrix(r.grad_W.rows(), r.grad_W.cols());
    }
    total.loss += r.loss;
    total.grad_tau += r.grad_tau;
    for (std::size_t i = 0; i < r.grad_W.size(); ++i)
      total.grad_W.data()[i] += r.grad_W.data()[i];
    probs.push_back(std::move(r.query_probs));
  }
  const double inv = 1.0 / static_cast<double>(episode.tasks.size());
  total.loss *= inv;
  total.grad_tau *= inv;
  for (double& v : total.grad_W.flat()) v *= inv;

  std::size_t rows = 0;
  for (const Matrix& p : probs) rows += p.rows();
  total.query_probs = Matrix(rows, probs.front().cols());
  std::size_t at = 0;
  for (const Matrix& p : probs)
    for (std::size_t r = 0; r < p.rows(); ++r, ++at)
      std::copy(p.row(r).begin(), p.row(r).end(), total.query_probs.row(at).begin());
  return total;
}

ClassifierLossResult classifier_loss_and_grad(const ClassifierModel& model,
                                              const Matrix& batch,
                                              std::span<const std::string> labels) {
  const std::size_t n = batch.rows();
  const std::size_t n_classes = model.class_order.size();
  if (labels.size() != n)
    throw std::invalid_argument("classifier: batch/label size mismatch");
  if (batch.cols() != model.W.rows())
    throw std::invalid_argument("classifier: dimension mismatch");
  if (model.b.size() != n_classes || model.W.cols() != n_classes)
    throw std::invalid_argument("classifier: W/b/class order disagree");

  std::vector<std::size_t> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::lower_bound(model.class_order.begin(),
                                     model.class_order.end(), labels[i]);
    if (it == model.class_order.end() || *it != labels[i])
      throw std::invalid_argument("classifier: unknown label " +
                                  std::string(labels[i]));
    truth[i] = static_cast<std::size_t>(it - model.class_order.begin());
  }

  Matrix logits = matmul(batch, model.W);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < n_classes; ++c) row[c] += model.b[c];
  }

  const Matrix probs = softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    double maxv = -std::numeric_limits<double>::infinity();
    for (double v : row) maxv = std::max(maxv, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - maxv);
    loss -= row[truth[i]] - maxv - std::log(sum);
  }
  const double inv = 1.0 / static_cast<double>(n);

  ClassifierLossResult result;
  result.loss = loss * inv;
  result.grad_W = Matrix(model.W.rows(), n_classes);
  result.grad_b.assign(n_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = batch.row(i);
    for (std::size_t c = 0; c < n_classes; ++c) {
      double gl = probs(i, c) * inv;
      if (c == truth[i]) gl -= inv;
      result.grad_b[c] += gl;
      if (gl == 0.0) continue;
      for (std::size_t d = 0; d < x.size(); ++d)
        result.grad_W(d, c) += x[d] * gl;
    }
  }
  return result;
}

std::vector<double> numeric_gradient(
    const std::function<double(std::span<const double>)>& loss_fn,
    std::span<const double> params, double h) {
  if (h <= 0.0) throw std::invalid_argument("numeric_gradient: h must be > 0");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = loss_fn(p);
    p[i] = saved - h;
    const double down = loss_fn(p);
    p[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

void save_model(const ProtoModel& model, const std::string& path) {
  validate_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "protoret-model,v1," << model.dim_in() << ',' << model.dim_out() << '\n';
  out << format_double(model.tau) << '\n';
  for (std::size_t r = 0; r < model.W.rows(); ++r) {
    const auto row = model.W.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      out << format_double(row[c]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> read_checkpoint_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::size_t parse_size(const std::string& field, const std::string& path) {
  std::size_t value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw FormatError(path + ": bad dimension \"" + field + "\"");
  return value;
}

} // namespace

ProtoModel load_model(const std::string& path) {
  const auto lines = read_checkpoint_lines(path);
  if (lines.empty()) throw FormatError(path + ": empty checkpoint");
  const auto header = split_csv(lines[0]);
  if (header.size() != 4 || header[0] != "protoret-model" || header[1] != "v1")
    throw FormatError(path + ": not a protoret-model,v1 checkpoint");
  const std::size_t d_in = parse_size(header[2], path);
  const std::size_t d_out = parse_size(header[3], path);
  if (lines.size() != 2 + d_in)
    throw FormatError(path + ": expected " + std::to_string(2 + d_in) + " lines");

  ProtoModel model;
  model.tau = parse_double(lines[1], path);
  model.W = Matrix(d_in, d_out);
  for (std::size_t r = 0; r < d_in; ++r) {
    const auto fields = split_csv(lines[2 + r]);
    if (fields.size() != d_out)
      throw FormatError(path + ": row " + std::to_string(r) + " has " +
                        std::to_string(fields.size()) + " values, expected " +
                        std::to_string(d_out));
    for (std::size_t c = 0; c < d_out; ++c)
      model.W(r, c) = parse_double(fields[c], path);
  }
  validate_model(model);
  return model;
}

void save_classifier(const ClassifierModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "protoret-classifier,v1," << model.W.rows() << ',' << model.W.cols()
      << '\n';
  for (std::size_t c = 0; c < model.class_order.size(); ++c) {
    if (c) out << ',';
    out << model.class_order[c];
  }
  out << '\n';
  for (std::size_t c = 0; c < model.b.size(); ++c) {
    if (c) out << ',';
    out << format_double(model.b[c]);
  }
  out << '\n';
  for (std::size_t r = 0; r < model.W.rows(); ++r) {
    const auto row = model.W.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      out << format_double(row[c]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

ClassifierModel load_classifier(const std::string& path) {
  const auto lines = read_checkpoint_lines(path);
  if (lines.empty()) throw FormatError(path + ": empty checkpoint");
  const auto header = split_csv(lines[0]);
  if (header.size() != 4 || header[0] != "protoret-classifier" || header[1] != "v1")
    throw FormatError(path + ": not a protoret-classifier,v1 checkpoint");
  const std::size_t dim = parse_size(header[2], path);
  const std::size_t n_classes = parse_size(header[3], path);
  if (lines.size() != 3 + dim)
    throw FormatError(path + ": expected " + std::to_string(3 + dim) + " lines");

  ClassifierModel model;
  model.class_order = split_csv(lines[1]);
  if (model.class_order.size() != n_classes)
    throw FormatError(path + ": class order has wrong length");
  if (!std::is_sorted(model.class_order.begin(), model.class_order.end()))
    throw FormatError(path + ": class order is not lexicographic");
  const auto b_fields = split_csv(lines[2]);
  if (b_fields.size() != n_classes)
    throw FormatError(path + ": bias has wrong length");
  for (const auto& f : b_fields) model.b.push_back(parse_double(f, path));
  model.W = Matrix(dim, n_classes);
  for (std::size_t r = 0; r < dim; ++r) {
    const auto fields = split_csv(lines[3 + r]);
    if (fields.size() != n_classes)
      throw FormatError(path + ": row " + std::to_string(r) + " has wrong length");
    for (std::size_t c = 0; c < n_classes; ++c)
      model.W(r, c) = parse_double(fields[c], path);
  }
  for (double v : model.W.flat())
    if (!std::isfinite(v)) throw FormatError(path + ": non-finite W entry");
  return model;
}

CheckpointKind checkpoint_kind(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  std::getline(in, line);
  const auto fields = split_csv(line);
  if (!fields.empty() && fields[0] == "protoret-model") return CheckpointKind::proto;
  if (!fields.empty() && fields[0] == "protoret-classifier")
    return CheckpointKind::classifier;
  throw FormatError(path + ": unrecognized checkpoint header");
}

} // namespace protoret
