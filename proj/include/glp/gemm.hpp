#pragma once

// Row-major accumulate-GEMM used by convolution and dense layers, backed by
// CBLAS (OpenBLAS).

#include <cblas.h>

#include <cstddef>
#include <type_traits>

namespace glp::nn::detail {

template <class T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (m == 0 || n == 0 || k == 0) return;
  const auto at = ta ? CblasTrans : CblasNoTrans;
  const auto bt = tb ? CblasTrans : CblasNoTrans;
  const auto mi = static_cast<int>(m), ni = static_cast<int>(n), ki = static_cast<int>(k);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, at, bt, mi, ni, ki, 1.0f, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), 1.0f, c, ni);
  } else {
    cblas_dgemm(CblasRowMajor, at, bt, mi, ni, ki, 1.0, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), 1.0, c, ni);
  }
}

/// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm(false, false, m, n, k, a, k, b, n, c);
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm(false, true, m, n, k, a, k, b, k, c);
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm(true, false, m, n, k, a, m, b, n, c);
}

}  // namespace glp::nn::detail
