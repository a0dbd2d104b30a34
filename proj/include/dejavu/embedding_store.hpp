#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dejavu {

/// Sorted, duplicate-free set of case-folded object labels.
using LabelSet = std::vector<std::string>;

/// Dense row-major float matrix with one opaque string ID per row.
///
/// Rows are always finite and IDs unique. When `normalized()` is true every
/// row has unit Euclidean norm (within 1e-5), so inner products are cosine
/// similarities.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Validates shape, ID uniqueness and finiteness. Passing `normalized =
  /// true` additionally checks every row norm.
  EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> data, std::size_t dim,
                  bool normalized = false);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }

  /// Rows picked (and reordered) by index.
  EmbeddingMatrix select(std::span<const std::size_t> rows) const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::size_t dim_ = 0;
  bool normalized_ = false;
};

/// Record ID -> ground-truth object labels.
using AnnotationTable = std::map<std::string, LabelSet>;

/// Aligned inputs of one k-NN audit: captions of the training split under the
/// target and reference models, the public image set under both models, and
/// object annotations for both sides. All matrices are normalized.
struct AuditDataset {
  std::string split_name;
  EmbeddingMatrix text_target;
  EmbeddingMatrix text_reference;
  AnnotationTable ground_truth;
  EmbeddingMatrix public_target;
  EmbeddingMatrix public_reference;
  AnnotationTable public_annotations;
};

struct EmbeddingPaths {
  std::filesystem::path header;
  std::filesystem::path payload;
};

/// Payload path for a header: explicit "payload" field if present, else the
/// header path with its extension replaced by ".f32".
std::filesystem::path default_payload_path(const std::filesystem::path& header);

EmbeddingMatrix load_embeddings(const std::filesystem::path& header);

/// Writes `<header>` (canonical JSON) and its payload next to it.
EmbeddingPaths save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& header);

AnnotationTable load_annotations(const std::filesystem::path& path);
void save_annotations(const AnnotationTable& table, const std::filesystem::path& path);

/// Parses one JSON-lines stream. `source` names it in error messages.
AnnotationTable parse_annotations(std::istream& in, const std::string& source);

/// Builds a LabelSet from raw labels: case-folds, sorts, drops duplicates.
/// Empty labels raise ValidationError.
LabelSet make_label_set(std::span<const std::string> labels);

/// Divides each row by its Euclidean norm. Zero rows raise ValidationError
/// naming the record. Idempotent.
EmbeddingMatrix normalize(const EmbeddingMatrix& m);

/// Checks and aligns the six inputs of an audit. Reference text rows are
/// reordered to match the target order. Mismatched ID sets raise
/// AlignmentError, overlap between split and public IDs raises ValidationError.
AuditDataset assemble(const EmbeddingMatrix& split_text_target,
                      const EmbeddingMatrix& split_text_reference,
                      const AnnotationTable& split_annotations,
                      const EmbeddingMatrix& public_target,
                      const EmbeddingMatrix& public_reference,
                      const AnnotationTable& public_annotations,
                      std::string split_name = "A");

/// Summary statistics printed by `dejavu ingest --check`.
struct EmbeddingSummary {
  std::size_t rows = 0;
  std::size_t dim = 0;
  double min_norm = 0.0;
  double max_norm = 0.0;
  double mean_norm = 0.0;
  std::size_t zero_rows = 0;
};

EmbeddingSummary summarize(const EmbeddingMatrix& m);

}  // namespace dejavu
