#pragma once

#include <cblas.h>

namespace viact::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) M x K and op(B) K x N.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b,
                 float beta, float* c) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, const double* b,
                 double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

}  // namespace viact::detail
