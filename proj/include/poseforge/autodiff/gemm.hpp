#pragma once

#include <algorithm>
#include <vector>

// Row-major accumulate-GEMM kernels: C[M,N] += op(A) op(B). The inner loop
// always runs over contiguous columns of C so it vectorizes without
// reassociating floating-point sums.
namespace poseforge::ad {

/// C += A[M,K] B[K,N].
template <class T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
  constexpr int kBlockK = 256;
  constexpr int kBlockN = 1024;
  for (int n0 = 0; n0 < n; n0 += kBlockN) {
    const int n1 = std::min(n, n0 + kBlockN);
    for (int k0 = 0; k0 < k; k0 += kBlockK) {
      const int k1 = std::min(k, k0 + kBlockK);
      for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = k0; p < k1; ++p) {
          const T av = arow[p];
          if (av == T(0)) continue;
          const T* brow = b + static_cast<std::size_t>(p) * n;
          for (int j = n0; j < n1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

/// C += A^T B with A stored [K,M], B [K,N].
template <class T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(p) * m + i];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C += A B^T with A stored [M,K], B [N,K].
template <class T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  std::vector<T> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace poseforge::ad
