#include "knn_kernel.hpp"

#include <cstring>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif

namespace dejavu::detail {

void score_tile_generic(const float* a_packed, const float* b_packed, std::size_t dim,
                        const float* thresholds, float* scores, std::uint32_t* masks) {
  float acc[kTileRows][kTileCols] = {};
  for (std::size_t k = 0; k < dim; ++k) {
    const float* a = a_packed + k * kTileRows;
    const float* b = b_packed + k * kTileCols;
    for (std::size_t i = 0; i < kTileRows; ++i) {
      const float ai = a[i];
      for (std::size_t j = 0; j < kTileCols; ++j) acc[i][j] += ai * b[j];
    }
  }
  for (std::size_t i = 0; i < kTileRows; ++i) {
    std::uint32_t m = 0;
    for (std::size_t j = 0; j < kTileCols; ++j) {
      scores[i * kTileCols + j] = acc[i][j];
      if (acc[i][j] >= thresholds[i]) m |= 1u << j;
    }
    masks[i] = m;
  }
}

#if defined(__x86_64__) || defined(__i386__)

__attribute__((target("avx512f"))) void score_tile_avx512(const float* a_packed,
                                                          const float* b_packed, std::size_t dim,
                                                          const float* thresholds, float* scores,
                                                          std::uint32_t* masks) {
  static_assert(kTileRows == 12 && kTileCols == 32);
  __m512 c00 = _mm512_setzero_ps(), c01 = _mm512_setzero_ps();
  __m512 c10 = _mm512_setzero_ps(), c11 = _mm512_setzero_ps();
  __m512 c20 = _mm512_setzero_ps(), c21 = _mm512_setzero_ps();
  __m512 c30 = _mm512_setzero_ps(), c31 = _mm512_setzero_ps();
  __m512 c40 = _mm512_setzero_ps(), c41 = _mm512_setzero_ps();
  __m512 c50 = _mm512_setzero_ps(), c51 = _mm512_setzero_ps();
  __m512 c60 = _mm512_setzero_ps(), c61 = _mm512_setzero_ps();
  __m512 c70 = _mm512_setzero_ps(), c71 = _mm512_setzero_ps();
  __m512 c80 = _mm512_setzero_ps(), c81 = _mm512_setzero_ps();
  __m512 c90 = _mm512_setzero_ps(), c91 = _mm512_setzero_ps();
  __m512 ca0 = _mm512_setzero_ps(), ca1 = _mm512_setzero_ps();
  __m512 cb0 = _mm512_setzero_ps(), cb1 = _mm512_setzero_ps();

  const float* a = a_packed;
  const float* b = b_packed;
  for (std::size_t k = 0; k < dim; ++k, a += kTileRows, b += kTileCols) {
    const __m512 b0 = _mm512_loadu_ps(b);
    const __m512 b1 = _mm512_loadu_ps(b + 16);
    __m512 x;
    x = _mm512_set1_ps(a[0]);
    c00 = _mm512_fmadd_ps(x, b0, c00);
    c01 = _mm512_fmadd_ps(x, b1, c01);
    x = _mm512_set1_ps(a[1]);
    c10 = _mm512_fmadd_ps(x, b0, c10);
    c11 = _mm512_fmadd_ps(x, b1, c11);
    x = _mm512_set1_ps(a[2]);
    c20 = _mm512_fmadd_ps(x, b0, c20);
    c21 = _mm512_fmadd_ps(x, b1, c21);
    x = _mm512_set1_ps(a[3]);
    c30 = _mm512_fmadd_ps(x, b0, c30);
    c31 = _mm512_fmadd_ps(x, b1, c31);
    x = _mm512_set1_ps(a[4]);
    c40 = _mm512_fmadd_ps(x, b0, c40);
    c41 = _mm512_fmadd_ps(x, b1, c41);
    x = _mm512_set1_ps(a[5]);
    c50 = _mm512_fmadd_ps(x, b0, c50);
    c51 = _mm512_fmadd_ps(x, b1, c51);
    x = _mm512_set1_ps(a[6]);
    c60 = _mm512_fmadd_ps(x, b0, c60);
    c61 = _mm512_fmadd_ps(x, b1, c61);
    x = _mm512_set1_ps(a[7]);
    c70 = _mm512_fmadd_ps(x, b0, c70);
    c71 = _mm512_fmadd_ps(x, b1, c71);
    x = _mm512_set1_ps(a[8]);
    c80 = _mm512_fmadd_ps(x, b0, c80);
    c81 = _mm512_fmadd_ps(x, b1, c81);
    x = _mm512_set1_ps(a[9]);
    c90 = _mm512_fmadd_ps(x, b0, c90);
    c91 = _mm512_fmadd_ps(x, b1, c91);
    x = _mm512_set1_ps(a[10]);
    ca0 = _mm512_fmadd_ps(x, b0, ca0);
    ca1 = _mm512_fmadd_ps(x, b1, ca1);
    x = _mm512_set1_ps(a[11]);
    cb0 = _mm512_fmadd_ps(x, b0, cb0);
    cb1 = _mm512_fmadd_ps(x, b1, cb1);
  }

  const __m512 rows[kTileRows][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31},
                                     {c40, c41}, {c50, c51}, {c60, c61}, {c70, c71},
                                     {c80, c81}, {c90, c91}, {ca0, ca1}, {cb0, cb1}};
  for (std::size_t i = 0; i < kTileRows; ++i) {
    const __m512 t = _mm512_set1_ps(thresholds[i]);
    const std::uint32_t lo = _mm512_cmp_ps_mask(rows[i][0], t, _CMP_GE_OQ);
    const std::uint32_t hi = _mm512_cmp_ps_mask(rows[i][1], t, _CMP_GE_OQ);
    masks[i] = lo | (hi << 16);
    if (masks[i] != 0) {
      _mm512_storeu_ps(scores + i * kTileCols, rows[i][0]);
      _mm512_storeu_ps(scores + i * kTileCols + 16, rows[i][1]);
    }
  }
}

#endif

ScoreTileFn select_score_tile() {
#if defined(__x86_64__) || defined(__i386__)
  if (__builtin_cpu_supports("avx512f")) return &score_tile_avx512;
#endif
  return &score_tile_generic;
}

}  // namespace dejavu::detail
