#ifndef PROTORET_CORE_CORPUS_HPP
#define PROTORET_CORE_CORPUS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/matrix.hpp"

namespace protoret {

/// A set of precomputed embedding vectors with sample ids and class labels.
/// Immutable after construction; row i of `vectors` belongs to sample_ids[i].
struct EmbeddingCorpus {
  std::vector<std::string> sample_ids;
  std::vector<std::string> class_labels;
  Matrix vectors; // N×D

  std::size_t size() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

/// Per-class membership over (a subset of) corpus rows.
/// Classes are ordered lexicographically, member lists ascending.
struct ClassIndex {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> counts;

  std::size_t num_classes() const { return classes.size(); }
  std::optional<std::size_t> find(const std::string& cls) const;
};

enum class Role : std::uint8_t { train, val, gallery, test };
enum class Group : std::uint8_t { frequent, rare };

const char* role_name(Role r);
const char* group_name(Group g);

/// Role/group assignment for the samples a manifest references.
/// Entries are std::nullopt for corpus rows the manifest does not mention.
struct SplitManifest {
  std::vector<std::optional<Role>> role;
  std::vector<std::optional<Group>> group;

  std::vector<std::size_t> rows_with(Role r) const;
  std::vector<std::size_t> rows_with(Role r, Group g) const;
  std::vector<std::size_t> rows_in_group(Group g) const;
};

/// Throws FormatError if any EmbeddingCorpus invariant is violated
/// (duplicate ids, ragged sizes, non-finite entries, dim < 1 with rows).
void validate_corpus(const EmbeddingCorpus& corpus);

/// Embeddings CSV: "<N>,<D>" header, then "<id>,<label>,<v1>,...,<vD>" rows,
/// shortest round-trip decimals, LF endings, no quoting.
EmbeddingCorpus load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingCorpus& corpus, const std::string& path);

ClassIndex build_class_index(const EmbeddingCorpus& corpus);
ClassIndex build_class_index(const EmbeddingCorpus& corpus,
                             std::span<const std::size_t> subset);

/// Manifest CSV: "<id>,<role>,<group>" per row, no header,
/// role in {train,val,gallery,test}, group in {frequent,rare}.
SplitManifest load_manifest(const std::string& path, const EmbeddingCorpus& corpus);
void save_manifest(const SplitManifest& manifest, const EmbeddingCorpus& corpus,
                   const std::string& path);

/// Returns a copy with every row scaled to unit Euclidean norm.
/// Throws on a zero-norm row, naming the sample id.
EmbeddingCorpus l2_normalize(const EmbeddingCorpus& corpus);

/// Shortest decimal form of v that parses back to exactly v.
std::string format_double(double v);

} // namespace protoret

#endif
