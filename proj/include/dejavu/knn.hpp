#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dejavu/embedding_store.hpp"

namespace dejavu {

/// The k public images closest to one caption embedding.
///
/// Similarities are nonincreasing; equal similarities are ordered by ascending
/// public ID.
struct NeighborSet {
  std::string query_id;
  std::vector<std::string> neighbor_ids;
  std::vector<double> similarities;

  friend bool operator==(const NeighborSet&, const NeighborSet&) = default;
};

inline constexpr std::size_t kDefaultK = 10;

/// Cosine similarity of two rows: float inputs, double accumulation in index
/// order. This is the reference value every search result reports.
double dot_exact(std::span<const float> a, std::span<const float> b);

/// Exact top-k by inner product. `public_set` must be normalized and the query
/// unit-norm (ContractError otherwise); k must lie in [1, rows] (ArgumentError).
NeighborSet top_k(std::span<const float> query, const EmbeddingMatrix& public_set, std::size_t k,
                  std::string query_id = {});

/// top_k for every query row. result[i] belongs to queries.row(i) for any
/// thread count.
std::vector<NeighborSet> batch_top_k(const EmbeddingMatrix& queries,
                                     const EmbeddingMatrix& public_set, std::size_t k);

/// Cosine distance (1 - max similarity) from the query to its nearest public row.
double min_distance(std::span<const float> query, const EmbeddingMatrix& public_set);

}  // namespace dejavu
