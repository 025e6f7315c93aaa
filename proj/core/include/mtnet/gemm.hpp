#ifndef MTNET_GEMM_HPP_
#define MTNET_GEMM_HPP_

#include <cstddef>

#include <cblas.h>

namespace mtnet {

// Row-major C = alpha * op(A) * op(B) + beta * C, dispatching to the BLAS
// precision matching T.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void set_compute_threads(int n);

}  // namespace mtnet

#endif  // MTNET_GEMM_HPP_
