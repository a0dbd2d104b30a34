#pragma once

// Blocked float32 inner-product kernel used to screen k-NN candidates.
//
// Layout: a query tile is packed k-major as A[d][kTileRows], a public panel as
// B[d][kTileCols]. score_tile writes C[kTileRows][kTileCols] = A^T B and, for
// each tile row i, a bitmask of columns whose score is >= thresholds[i].

#include <cstddef>
#include <cstdint>

namespace dejavu::detail {

inline constexpr std::size_t kTileRows = 12;
inline constexpr std::size_t kTileCols = 32;

using ScoreTileFn = void (*)(const float* a_packed, const float* b_packed, std::size_t dim,
                             const float* thresholds, float* scores, std::uint32_t* masks);

void score_tile_generic(const float* a_packed, const float* b_packed, std::size_t dim,
                        const float* thresholds, float* scores, std::uint32_t* masks);

#if defined(__x86_64__) || defined(__i386__)
void score_tile_avx512(const float* a_packed, const float* b_packed, std::size_t dim,
                       const float* thresholds, float* scores, std::uint32_t* masks);
#endif

/// Widest kernel the running CPU supports.
ScoreTileFn select_score_tile();

}  // namespace dejavu::detail
