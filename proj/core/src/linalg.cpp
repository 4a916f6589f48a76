#include "semcom/linalg.hpp"

namespace semcom {

void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    // i-k-j order keeps the inner loop contiguous in both B and C.
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<long>(i) * k;
        double* crow = c + static_cast<long>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void transpose(const double* src, double* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            dst[static_cast<long>(j) * rows + i] = src[static_cast<long>(i) * cols + j];
        }
    }
}

} // namespace semcom
