#pragma once

#include <vector>

namespace semcom {

// C[M,N] += A[M,K] * B[K,N], all row-major.
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n);

// dst[cols,rows] = src[rows,cols]^T, row-major.
void transpose(const double* src, double* dst, int rows, int cols);

} // namespace semcom
