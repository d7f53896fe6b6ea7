#pragma once

// Dense products shared by matmul, convolution and channel mixing, row-major.
// Operands are widened so every inner product accumulates in double; results
// are rounded once when stored.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace asc::detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<const RowMajor>;

inline Map widen(const float* src, std::int64_t rows, std::int64_t cols, std::vector<double>& buf) {
  buf.assign(src, src + rows * cols);
  return Map(buf.data(), rows, cols);
}

template <typename Product>
void store(const Product& product, std::int64_t M, std::int64_t N, float* C, bool accumulate) {
  thread_local RowMajor result;
  result.noalias() = product;
  if (accumulate) {
    for (std::int64_t i = 0; i < M * N; ++i) C[i] = static_cast<float>(static_cast<double>(C[i]) + result.data()[i]);
  } else {
    for (std::int64_t i = 0; i < M * N; ++i) C[i] = static_cast<float>(result.data()[i]);
  }
}

// C[M,N] (+)= A[M,K] * B[K,N]
inline void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
  if (M == 0 || N == 0) return;
  thread_local std::vector<double> a, b;
  store(widen(A, M, K, a) * widen(B, K, N, b), M, N, C, accumulate);
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
inline void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
  if (M == 0 || N == 0) return;
  thread_local std::vector<double> a, b;
  store(widen(A, K, M, a).transpose() * widen(B, K, N, b), M, N, C, accumulate);
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
inline void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, const float* B, float* C,
                    bool accumulate) {
  if (M == 0 || N == 0) return;
  thread_local std::vector<double> a, b;
  store(widen(A, M, K, a) * widen(B, N, K, b).transpose(), M, N, C, accumulate);
}

}  // namespace asc::detail
