#pragma once

namespace masktune::detail {

// C[M,N] += A[M,K] * B[K,N]; all row-major, non-aliasing.
void gemm_accumulate(const double* a, const double* b, double* c, int m, int n, int k);

// dst[cols,rows] = src[rows,cols]^T, row-major.
void transpose(const double* src, double* dst, int rows, int cols);

}  // namespace masktune::detail
