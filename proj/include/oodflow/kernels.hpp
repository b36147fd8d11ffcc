#pragma once

#include <cstddef>

namespace oodflow {

// OpenMP-parallel dense kernels used by the flow's hot paths.
//
// Every kernel is deterministic by construction: each output element is
// owned by exactly one thread and its reduction runs serially in a fixed
// index order, so results are bit-identical for any thread count.

// C[M x N] += A[M x K] * B[K x N], all row-major with the given leading
// dimensions. Parallel over row blocks of C.
void gemm_accum(float* c, const float* a, const float* b, size_t m, size_t n,
                size_t k, size_t ldc, size_t lda, size_t ldb);

// C = A * B with the same tiling and per-element accumulation order as
// gemm_accum, but the result is stored instead of added, so C need not be
// zeroed (or even initialized) beforehand.
void gemm_set(float* c, const float* a, const float* b, size_t m, size_t n,
              size_t k, size_t ldc, size_t lda, size_t ldb);

// dst[C x R] = src[R x C]^T, row-major.
void transpose(float* dst, const float* src, size_t rows, size_t cols);

// Serial reference kernels kept for testing and benchmarking the parallel
// ones. Naive loop nests, no tiling.
namespace ref {
void gemm_accum(float* c, const float* a, const float* b, size_t m, size_t n,
                size_t k, size_t ldc, size_t lda, size_t ldb);
}  // namespace ref

}  // namespace oodflow
