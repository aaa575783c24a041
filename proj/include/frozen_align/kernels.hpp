#pragma once

// Dense kernels used by the projection network and the contrastive loss.
//
// `kernels::` holds the OpenMP-parallel versions used on the training path;
// `kernels::reference::` holds straightforward serial loops kept as the
// testing oracle and the benchmark baseline. Both accumulate every output
// element with fused multiply-adds over the inner dimension in increasing
// index order, and the
// parallel versions partition work over output rows or columns only, so
// results do not depend on the thread count.

#include <cstddef>

#include "frozen_align/matrix.hpp"

namespace frozen_align::kernels {

/// C = A·B  (A m×k, B k×n). C is resized.
template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

/// C = A·Bᵀ (A m×k, B n×k).
template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

/// C = Aᵀ·B (A k×m, B k×n).
template <class T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

template <class T>
void transpose(const Matrix<T>& a, Matrix<T>& out);

/// Row-vector of column sums (1×cols), rows summed in order.
template <class T>
void column_sums(const Matrix<T>& a, Matrix<T>& out);

/// Y += row broadcast of `bias` (1×cols).
template <class T>
void add_row_broadcast(Matrix<T>& y, const Matrix<T>& bias);

/// Number of threads the parallel kernels will use.
int max_threads() noexcept;

/// Caps internal parallelism; n <= 0 restores the runtime default.
void set_max_threads(int n) noexcept;

namespace reference {

template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

template <class T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

template <class T>
void transpose(const Matrix<T>& a, Matrix<T>& out);

template <class T>
void column_sums(const Matrix<T>& a, Matrix<T>& out);

}  // namespace reference

}  // namespace frozen_align::kernels
