#pragma once

#include <Eigen/Core>

namespace cdraw {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], row-major buffers.
// A is stored [m,k], or [k,m] when trans_a; likewise for B.
inline void gemm(int64_t m, int64_t n, int64_t k, const float* a, bool trans_a,
                 const float* b, bool trans_b, float* c, bool accumulate) {
  using RM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<RM>;
  using CMap = Eigen::Map<const RM>;
  Map C(c, m, n);
  CMap A(a, trans_a ? k : m, trans_a ? m : k);
  CMap B(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (trans_a && !trans_b) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!trans_a && trans_b) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

// Reusable per-thread scratch buffers for im2col style temporaries.
inline std::vector<float>& scratch_buffer(int which) {
  static thread_local std::vector<float> bufs[4];
  return bufs[which];
}

}  // namespace cdraw
