#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dejavu/embedding_store.hpp"

namespace dejavu {

/// Captioned records considered for deduplication and splitting.
struct CorpusIndex {
  std::vector<std::string> ids;
  std::vector<std::string> captions;
  std::optional<EmbeddingMatrix> embeddings;
};

/// Reads {"id": string, "caption": string} JSON lines. IDs must be unique.
CorpusIndex load_captions(const std::filesystem::path& path);

/// Keeps one record per caption (NFC + case-fold + whitespace-collapsed key),
/// namely the one with the smallest ID. Output follows input order.
std::vector<std::string> caption_dedup(const CorpusIndex& corpus);

/// Greedy scan in ascending ID order: a record survives iff its cosine
/// similarity to every previously kept record is below `threshold`. Output
/// follows input row order. Requires normalized embeddings.
std::vector<std::string> semantic_dedup(const EmbeddingMatrix& embeddings, double threshold);

struct DisjointSplit {
  std::vector<std::string> a;
  std::vector<std::string> b;
  std::vector<std::string> pub;
};

/// Seeded uniform shuffle of `ids` cut into three disjoint parts of exactly
/// the requested sizes.
DisjointSplit split_disjoint(std::span<const std::string> ids, std::array<std::size_t, 3> sizes,
                             std::uint64_t seed);

}  // namespace dejavu
