#include "core/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "core/error.hpp"

namespace protoret {

namespace {

// Splits on ',' only; the formats forbid quoting and embedded commas.
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

double parse_double_field(const std::string& field, const std::string& path,
                          std::size_t line_no) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw FormatError(path + ": invalid float \"" + field + "\" at line " +
                      std::to_string(line_no));
  }
  return value;
}

std::size_t parse_count_field(const std::string& field, const std::string& path,
                              const char* what) {
  std::size_t value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw FormatError(path + ": malformed header, bad " + std::string(what) +
                      " \"" + field + "\"");
  }
  return value;
}

// getline that tolerates a trailing '\r'; files are written with LF only.
bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

} // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::optional<std::size_t> ClassIndex::find(const std::string& cls) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), cls);
  if (it == classes.end() || *it != cls) return std::nullopt;
  return static_cast<std::size_t>(it - classes.begin());
}

const char* role_name(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::val: return "val";
    case Role::gallery: return "gallery";
    case Role::test: return "test";
  }
  return "?";
}

const char* group_name(Group g) {
  return g == Group::frequent ? "frequent" : "rare";
}

std::vector<std::size_t> SplitManifest::rows_with(Role r) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < role.size(); ++i)
    if (role[i] == r) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitManifest::rows_with(Role r, Group g) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < role.size(); ++i)
    if (role[i] == r && group[i] == g) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitManifest::rows_in_group(Group g) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == g) out.push_back(i);
  return out;
}

void validate_corpus(const EmbeddingCorpus& corpus) {
  const std::size_t n = corpus.vectors.rows();
  if (corpus.sample_ids.size() != n || corpus.class_labels.size() != n)
    throw FormatError("corpus: ids/labels/rows have inconsistent sizes");
  if (corpus.dim() < 1 && n > 0)
    throw FormatError("corpus: dim must be >= 1");
  std::unordered_set<std::string> seen;
  seen.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(corpus.sample_ids[i]).second)
      throw FormatError("corpus: duplicate sample id " + corpus.sample_ids[i]);
  }
  for (double v : corpus.vectors.flat()) {
    if (!std::isfinite(v)) throw FormatError("corpus: non-finite value");
  }
}

EmbeddingCorpus load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file: " + path);

  std::string line;
  if (!read_line(in, line))
    throw FormatError(path + ": malformed header, empty file");
  const auto header = split_csv(line);
  if (header.size() != 2)
    throw FormatError(path + ": malformed header, expected \"<N>,<D>\"");
  const std::size_t n = parse_count_field(header[0], path, "row count");
  const std::size_t dim = parse_count_field(header[1], path, "dimension");
  if (dim < 1) throw FormatError(path + ": malformed header, dim must be >= 1");

  EmbeddingCorpus corpus;
  corpus.sample_ids.reserve(n);
  corpus.class_labels.reserve(n);
  corpus.vectors = Matrix(n, dim);

  std::unordered_set<std::string> seen;
  seen.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 2;
    if (!read_line(in, line))
      throw FormatError(path + ": expected " + std::to_string(n) +
                        " rows, file ends at line " + std::to_string(line_no));
    const auto fields = split_csv(line);
    if (fields.size() != dim + 2)
      throw FormatError(path + ": inconsistent column count at line " +
                        std::to_string(line_no));
    if (!seen.insert(fields[0]).second)
      throw FormatError(path + ": duplicate sample id " + fields[0] +
                        " at line " + std::to_string(line_no));
    corpus.sample_ids.push_back(fields[0]);
    corpus.class_labels.push_back(fields[1]);
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = parse_double_field(fields[d + 2], path, line_no);
      if (!std::isfinite(v))
        throw FormatError(path + ": non-finite value at line " +
                          std::to_string(line_no));
      corpus.vectors(i, d) = v;
    }
  }
  if (read_line(in, line) && !line.empty())
    throw FormatError(path + ": trailing content after row " + std::to_string(n));
  return corpus;
}

namespace {

// The formats use no quoting, so ids and labels must stay comma/newline free.
void check_field(const std::string& field, const char* what) {
  if (field.find(',') != std::string::npos ||
      field.find('\n') != std::string::npos)
    throw std::invalid_argument(std::string(what) + " \"" + field +
                                "\" must not contain commas or newlines");
}

} // namespace

void save_embeddings(const EmbeddingCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary); // binary keeps LF endings everywhere
  if (!out) throw IoError("cannot open for writing: " + path);
  out << corpus.size() << ',' << corpus.dim() << '\n';
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    check_field(corpus.sample_ids[i], "sample id");
    check_field(corpus.class_labels[i], "class label");
    out << corpus.sample_ids[i] << ',' << corpus.class_labels[i];
    for (double v : corpus.vectors.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

ClassIndex index_rows(const EmbeddingCorpus& corpus,
                      std::span<const std::size_t> rows) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t row : rows) {
    if (row >= corpus.size())
      throw std::invalid_argument("build_class_index: row " +
                                  std::to_string(row) + " out of range");
    by_class[corpus.class_labels[row]].push_back(row);
  }
  ClassIndex index;
  index.classes.reserve(by_class.size());
  for (auto& [cls, members] : by_class) {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    index.classes.push_back(cls);
    index.counts.push_back(members.size());
    index.members.push_back(std::move(members));
  }
  return index;
}

} // namespace

ClassIndex build_class_index(const EmbeddingCorpus& corpus) {
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return index_rows(corpus, all);
}

ClassIndex build_class_index(const EmbeddingCorpus& corpus,
                             std::span<const std::size_t> subset) {
  return index_rows(corpus, subset);
}

SplitManifest load_manifest(const std::string& path,
                            const EmbeddingCorpus& corpus) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest file: " + path);

  std::unordered_map<std::string, std::size_t> row_of;
  row_of.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) row_of.emplace(corpus.sample_ids[i], i);

  SplitManifest manifest;
  manifest.role.assign(corpus.size(), std::nullopt);
  manifest.group.assign(corpus.size(), std::nullopt);

  std::string line;
  std::size_t line_no = 0;
  while (read_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3)
      throw FormatError(path + ": expected \"<id>,<role>,<group>\" at line " +
                        std::to_string(line_no));
    const auto it = row_of.find(fields[0]);
    if (it == row_of.end())
      throw FormatError(path + ": unknown sample id " + fields[0] +
                        " at line " + std::to_string(line_no));
    const std::size_t row = it->second;
    if (manifest.role[row].has_value())
      throw FormatError(path + ": duplicate sample id " + fields[0] +
                        " at line " + std::to_string(line_no));

    Role role;
    if (fields[1] == "train") role = Role::train;
    else if (fields[1] == "val") role = Role::val;
    else if (fields[1] == "gallery") role = Role::gallery;
    else if (fields[1] == "test") role = Role::test;
    else
      throw FormatError(path + ": invalid role token \"" + fields[1] +
                        "\" at line " + std::to_string(line_no));

    Group group;
    if (fields[2] == "frequent") group = Group::frequent;
    else if (fields[2] == "rare") group = Group::rare;
    else
      throw FormatError(path + ": invalid group token \"" + fields[2] +
                        "\" at line " + std::to_string(line_no));

    manifest.role[row] = role;
    manifest.group[row] = group;
  }
  return manifest;
}

void save_manifest(const SplitManifest& manifest, const EmbeddingCorpus& corpus,
                   const std::string& path) {
  if (manifest.role.size() != corpus.size())
    throw std::invalid_argument("save_manifest: manifest does not match corpus");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!manifest.role[i].has_value()) continue;
    check_field(corpus.sample_ids[i], "sample id");
    out << corpus.sample_ids[i] << ',' << role_name(*manifest.role[i]) << ','
        << group_name(*manifest.group[i]) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

EmbeddingCorpus l2_normalize(const EmbeddingCorpus& corpus) {
  EmbeddingCorpus out = corpus;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = out.vectors.row(i);
    const double norm = std::sqrt(norm2(row));
    if (norm == 0.0)
      throw std::invalid_argument("zero-norm row " + corpus.sample_ids[i]);
    for (double& v : row) v /= norm;
  }
  return out;
}

} // namespace protoret
