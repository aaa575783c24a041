#include "frozen_align/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <vector>

#include <omp.h>

namespace frozen_align::kernels {

namespace {

// Register tile: MR rows of A against an NR-wide panel of packed B.
template <class T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr std::size_t MR = 6;
  static constexpr std::size_t NR = 32;
};
template <>
struct Tile<double> {
  static constexpr std::size_t MR = 6;
  static constexpr std::size_t NR = 16;
};

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 1024;

// Full MR×NR tile. `bp` is a kc×NR panel stored row-contiguous.
template <class T>
inline void micro_full(const T* a, std::size_t lda, const T* bp, std::size_t kc, T* c, std::size_t ldc) {
  constexpr std::size_t MR = Tile<T>::MR;
  constexpr std::size_t NR = Tile<T>::NR;
  T acc[MR][NR];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t p = 0; p < kc; ++p) {
    const T* b = bp + p * NR;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * lda + p];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] = std::fma(av, b[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[r * ldc + j] = acc[r][j];
}

// Ragged edge tile (mr <= MR, nr <= NR); same accumulation order.
template <class T>
inline void micro_edge(const T* a, std::size_t lda, const T* bp, std::size_t kc, T* c, std::size_t ldc,
                       std::size_t mr, std::size_t nr) {
  constexpr std::size_t NR = Tile<T>::NR;
  for (std::size_t r = 0; r < mr; ++r) {
    T acc[NR];
    for (std::size_t j = 0; j < nr; ++j) acc[j] = c[r * ldc + j];
    for (std::size_t p = 0; p < kc; ++p) {
      const T av = a[r * lda + p];
      const T* b = bp + p * NR;
      for (std::size_t j = 0; j < nr; ++j) acc[j] = std::fma(av, b[j], acc[j]);
    }
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] = acc[j];
  }
}

// Packs B[k0:k0+kc, n0:n0+nc] into NR-wide panels, zero-padding the last one.
template <class T>
void pack_b(const Matrix<T>& b, std::size_t k0, std::size_t kc, std::size_t n0, std::size_t nc, std::vector<T>& buf) {
  constexpr std::size_t NR = Tile<T>::NR;
  const std::size_t panels = (nc + NR - 1) / NR;
  buf.assign(panels * kc * NR, T{});
  const std::size_t ldb = b.cols();
#pragma omp parallel for schedule(static)
  for (std::size_t q = 0; q < panels; ++q) {
    const std::size_t j0 = q * NR;
    const std::size_t w = std::min(NR, nc - j0);
    T* dst = buf.data() + q * kc * NR;
    for (std::size_t p = 0; p < kc; ++p) {
      const T* src = b.data() + (k0 + p) * ldb + n0 + j0;
      std::copy(src, src + w, dst + p * NR);
    }
  }
}

}  // namespace

template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.rows());
  constexpr std::size_t MR = Tile<T>::MR;
  constexpr std::size_t NR = Tile<T>::NR;
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  c.resize(m, n);
  c.fill(T{});
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<T> packed;
  const std::size_t row_tiles = (m + MR - 1) / MR;
  for (std::size_t n0 = 0; n0 < n; n0 += kBlockN) {
    const std::size_t nc = std::min(kBlockN, n - n0);
    const std::size_t panels = (nc + NR - 1) / NR;
    for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
      const std::size_t kc = std::min(kBlockK, k - k0);
      pack_b(b, k0, kc, n0, nc, packed);
#pragma omp parallel for schedule(static)
      for (std::size_t t = 0; t < row_tiles; ++t) {
        const std::size_t i0 = t * MR;
        const std::size_t mr = std::min(MR, m - i0);
        const T* arow = a.data() + i0 * k + k0;
        for (std::size_t q = 0; q < panels; ++q) {
          const std::size_t j0 = q * NR;
          const std::size_t nr = std::min(NR, nc - j0);
          T* ctile = c.data() + i0 * n + n0 + j0;
          const T* bp = packed.data() + q * kc * NR;
          if (mr == MR && nr == NR)
            micro_full(arow, k, bp, kc, ctile, n);
          else
            micro_edge(arow, k, bp, kc, ctile, n, mr, nr);
        }
      }
    }
  }
}

template <class T>
void transpose(const Matrix<T>& a, Matrix<T>& out) {
  constexpr std::size_t kTile = 32;
  const std::size_t rows = a.rows(), cols = a.cols();
  out.resize(cols, rows);
  const std::size_t row_blocks = (rows + kTile - 1) / kTile;
#pragma omp parallel for schedule(static)
  for (std::size_t rb = 0; rb < row_blocks; ++rb) {
    const std::size_t r0 = rb * kTile;
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) out(cc, r) = a(r, cc);
    }
  }
}

template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  Matrix<T> bt;
  transpose(b, bt);
  matmul(a, bt, c);
}

template <class T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  Matrix<T> at;
  transpose(a, at);
  matmul(at, b, c);
}

template <class T>
void column_sums(const Matrix<T>& a, Matrix<T>& out) {
  const std::size_t rows = a.rows(), cols = a.cols();
  out.resize(1, cols);
  out.fill(T{});
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (cols + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
  for (std::size_t q = 0; q < chunks; ++q) {
    const std::size_t c0 = q * kChunk;
    const std::size_t c1 = std::min(cols, c0 + kChunk);
    T* o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* src = a.data() + r * cols;
      for (std::size_t cc = c0; cc < c1; ++cc) o[cc] += src[cc];
    }
  }
}

template <class T>
void add_row_broadcast(Matrix<T>& y, const Matrix<T>& bias) {
  assert(bias.size() == y.cols());
  const std::size_t rows = y.rows(), cols = y.cols();
  const T* b = bias.data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = y.data() + r * cols;
    for (std::size_t cc = 0; cc < cols; ++cc) dst[cc] += b[cc];
  }
}

int max_threads() noexcept { return omp_get_max_threads(); }

void set_max_threads(int n) noexcept {
  if (n > 0) {
    omp_set_num_threads(n);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
}

namespace reference {

template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.rows());
  c.resize(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T s{};
      for (std::size_t p = 0; p < a.cols(); ++p) s = std::fma(a(i, p), b(p, j), s);
      c(i, j) = s;
    }
}

template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.cols());
  c.resize(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      T s{};
      for (std::size_t p = 0; p < a.cols(); ++p) s = std::fma(a(i, p), b(j, p), s);
      c(i, j) = s;
    }
}

template <class T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.rows() == b.rows());
  c.resize(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T s{};
      for (std::size_t p = 0; p < a.rows(); ++p) s = std::fma(a(p, i), b(p, j), s);
      c(i, j) = s;
    }
}

template <class T>
void transpose(const Matrix<T>& a, Matrix<T>& out) {
  out.resize(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
}

template <class T>
void column_sums(const Matrix<T>& a, Matrix<T>& out) {
  out.resize(1, a.cols());
  out.fill(T{});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a(r, c);
}

}  // namespace reference

#define FROZEN_ALIGN_INSTANTIATE(T)                                                  \
  template void matmul<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);           \
  template void matmul_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);        \
  template void matmul_tn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);        \
  template void transpose<T>(const Matrix<T>&, Matrix<T>&);                          \
  template void column_sums<T>(const Matrix<T>&, Matrix<T>&);                        \
  template void add_row_broadcast<T>(Matrix<T>&, const Matrix<T>&);                  \
  template void reference::matmul<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void reference::matmul_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void reference::matmul_tn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void reference::transpose<T>(const Matrix<T>&, Matrix<T>&);               \
  template void reference::column_sums<T>(const Matrix<T>&, Matrix<T>&);

FROZEN_ALIGN_INSTANTIATE(float)
FROZEN_ALIGN_INSTANTIATE(double)

#undef FROZEN_ALIGN_INSTANTIATE

}  // namespace frozen_align::kernels
