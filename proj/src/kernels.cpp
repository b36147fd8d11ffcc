#include "oodflow/kernels.hpp"

#include <algorithm>
#include <vector>

namespace oodflow {

namespace {

// Register tile. 8x48 keeps 24 sixteen-lane accumulators plus the three
// B-row vectors live on AVX-512 and still vectorizes acceptably on narrower
// ISAs; the wide tile amortizes the A broadcasts that bound the batch-sized
// (m=256) training shapes.
constexpr size_t kMr = 8;
constexpr size_t kNr = 48;

// MR x NR tile with compile-time width: the j loops have constant trip
// counts, so the column axis vectorizes even when mr is a runtime remainder.
// Accumulators stay in registers, k runs serially (per-element order is
// p-ascending regardless of tile shape). Acc selects += vs = on the store.
template <size_t NR, bool Acc>
inline void tile_band(float* __restrict c, const float* __restrict a,
                      const float* __restrict b, size_t mr, size_t k,
                      size_t ldc, size_t lda, size_t ldb) {
  float acc[kMr][NR];
  for (size_t r = 0; r < mr; ++r)
    for (size_t j = 0; j < NR; ++j) acc[r][j] = 0.0f;
  for (size_t p = 0; p < k; ++p) {
    const float* __restrict brow = b + p * ldb;
    for (size_t r = 0; r < mr; ++r) {
      const float av = a[r * lda + p];
      for (size_t j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (size_t r = 0; r < mr; ++r) {
    float* __restrict crow = c + r * ldc;
    for (size_t j = 0; j < NR; ++j)
      if constexpr (Acc)
        crow[j] += acc[r][j];
      else
        crow[j] = acc[r][j];
  }
}

// Fast path: both dimensions at full tile size.
template <bool Acc>
inline void tile_full(float* __restrict c, const float* __restrict a,
                      const float* __restrict b, size_t k, size_t ldc,
                      size_t lda, size_t ldb) {
  float acc[kMr][kNr];
  for (size_t r = 0; r < kMr; ++r)
    for (size_t j = 0; j < kNr; ++j) acc[r][j] = 0.0f;
  for (size_t p = 0; p < k; ++p) {
    const float* __restrict brow = b + p * ldb;
    for (size_t r = 0; r < kMr; ++r) {
      const float av = a[r * lda + p];
      for (size_t j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (size_t r = 0; r < kMr; ++r) {
    float* __restrict crow = c + r * ldc;
    for (size_t j = 0; j < kNr; ++j)
      if constexpr (Acc)
        crow[j] += acc[r][j];
      else
        crow[j] = acc[r][j];
  }
}

// Scalar remainder for widths below the narrowest vector band; same
// per-element k order as the banded tiles.
template <bool Acc>
inline void tile_edge(float* c, const float* a, const float* b, size_t mr,
                      size_t nr, size_t k, size_t ldc, size_t lda, size_t ldb) {
  for (size_t r = 0; r < mr; ++r) {
    float* crow = c + r * ldc;
    for (size_t j = 0; j < nr; ++j) {
      float s = 0.0f;
      for (size_t p = 0; p < k; ++p) s += a[r * lda + p] * b[p * ldb + j];
      if constexpr (Acc)
        crow[j] += s;
      else
        crow[j] = s;
    }
  }
}

// B is consumed one column band at a time, packed contiguously first. The
// band (k x NR floats) then stays cache-resident across every m-tile, and
// the microkernel streams it with unit stride: with a large ldb the raw
// layout puts successive B rows a page apart, and the resulting TLB misses
// dominate large-k shapes. Packing changes neither the per-element pairing
// nor the accumulation order, so results stay bitwise identical.
template <size_t NR, bool Acc>
void gemm_band(float* c, const float* a, const float* b, float* pb, size_t m,
               size_t k, size_t ldc, size_t lda, size_t ldb) {
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < static_cast<long long>(k); ++p) {
    const float* src = b + static_cast<size_t>(p) * ldb;
    float* dst = pb + static_cast<size_t>(p) * NR;
    for (size_t j = 0; j < NR; ++j) dst[j] = src[j];
  }
  const size_t mtiles = (m + kMr - 1) / kMr;
#pragma omp parallel for schedule(static)
  for (long long ti = 0; ti < static_cast<long long>(mtiles); ++ti) {
    const size_t i0 = static_cast<size_t>(ti) * kMr;
    const size_t mr = std::min(kMr, m - i0);
    if (NR == kNr && mr == kMr)
      tile_full<Acc>(c + i0 * ldc, a + i0 * lda, pb, k, ldc, lda, NR);
    else
      tile_band<NR, Acc>(c + i0 * ldc, a + i0 * lda, pb, mr, k, ldc, lda, NR);
  }
}

template <bool Acc>
void gemm_impl(float* c, const float* a, const float* b, size_t m, size_t n,
               size_t k, size_t ldc, size_t lda, size_t ldb) {
  static thread_local std::vector<float> bpack;
  bpack.resize(k * kNr);
  float* pb = bpack.data();

  size_t j = 0;
  for (; j + kNr <= n; j += kNr)
    gemm_band<kNr, Acc>(c + j, a, b + j, pb, m, k, ldc, lda, ldb);
  if (j + 32 <= n) {
    gemm_band<32, Acc>(c + j, a, b + j, pb, m, k, ldc, lda, ldb);
    j += 32;
  }
  if (j + 16 <= n) {
    gemm_band<16, Acc>(c + j, a, b + j, pb, m, k, ldc, lda, ldb);
    j += 16;
  }
  if (j < n) {
    // sub-vector tail: scalar tiles against the unpacked source
    const size_t mtiles = (m + kMr - 1) / kMr;
#pragma omp parallel for schedule(static)
    for (long long ti = 0; ti < static_cast<long long>(mtiles); ++ti) {
      const size_t i0 = static_cast<size_t>(ti) * kMr;
      const size_t mr = std::min(kMr, m - i0);
      tile_edge<Acc>(c + i0 * ldc + j, a + i0 * lda, b + j, mr, n - j, k, ldc,
                     lda, ldb);
    }
  }
}

}  // namespace

void gemm_accum(float* c, const float* a, const float* b, size_t m, size_t n,
                size_t k, size_t ldc, size_t lda, size_t ldb) {
  gemm_impl<true>(c, a, b, m, n, k, ldc, lda, ldb);
}

void gemm_set(float* c, const float* a, const float* b, size_t m, size_t n,
              size_t k, size_t ldc, size_t lda, size_t ldb) {
  gemm_impl<false>(c, a, b, m, n, k, ldc, lda, ldb);
}

void transpose(float* dst, const float* src, size_t rows, size_t cols) {
  constexpr size_t kBlk = 32;
#pragma omp parallel for schedule(static)
  for (long long bi = 0; bi < static_cast<long long>((rows + kBlk - 1) / kBlk);
       ++bi) {
    const size_t i0 = static_cast<size_t>(bi) * kBlk;
    const size_t i1 = std::min(i0 + kBlk, rows);
    for (size_t j0 = 0; j0 < cols; j0 += kBlk) {
      const size_t j1 = std::min(j0 + kBlk, cols);
      for (size_t i = i0; i < i1; ++i)
        for (size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

namespace ref {

void gemm_accum(float* c, const float* a, const float* b, size_t m, size_t n,
                size_t k, size_t ldc, size_t lda, size_t ldb) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      float s = 0.0f;
      for (size_t p = 0; p < k; ++p) s += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] += s;
    }
}

}  // namespace ref

}  // namespace oodflow
