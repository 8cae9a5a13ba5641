#pragma once

// Row-major GEMM entry point shared by the autodiff primitives.

#include <Eigen/Core>
#include <cstddef>

namespace musc::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m,n] (+)= op(A) * op(B) where op(A) is m x k and op(B) is k x n.
// A is stored as [m,k] (or [k,m] when trans_a); B as [k,n] (or [n,k]).
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto im = static_cast<Eigen::Index>(m);
  const auto in = static_cast<Eigen::Index>(n);
  const auto ik = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMat<T>> cm(c, im, in);
  Map am(a, trans_a ? ik : im, trans_a ? im : ik);
  Map bm(b, trans_b ? in : ik, trans_b ? ik : in);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

}  // namespace musc::detail
