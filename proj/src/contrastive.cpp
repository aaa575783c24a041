#include "frozen_align/contrastive.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "frozen_align/error.hpp"
#include "frozen_align/kernels.hpp"

namespace frozen_align {

namespace {

constexpr double kMinNorm = 1e-12;

template <class T>
double row_norm(std::span<const T> row) {
  double s = 0.0;
  for (T v : row) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <class T>
void require_pair(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b) {
  if (!a.normalized || !b.normalized) throw Error(ErrorCode::NotNormalized, "embedding batches must be normalized");
  if (a.data.cols() != b.data.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "embedding widths differ: " + std::to_string(a.data.cols()) + " vs " +
                                              std::to_string(b.data.cols()));
  }
}

}  // namespace

template <class T>
EmbeddingBatch<T> normalize(const Matrix<T>& batch) {
  EmbeddingBatch<T> out{batch, true};
  const std::size_t rows = batch.rows();
  bool zero = false;
#pragma omp parallel for schedule(static) reduction(|| : zero)
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = row_norm<T>(batch.row(r));
    if (n < kMinNorm) {
      zero = true;
      continue;
    }
    const double inv = 1.0 / n;
    for (T& v : out.data.row(r)) v = static_cast<T>(static_cast<double>(v) * inv);
  }
  if (zero) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero row");
  return out;
}

template <class T>
Matrix<T> similarity_matrix(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b) {
  require_pair(a, b);
  Matrix<T> s;
  kernels::matmul_nt(a.data, b.data, s);
  return s;
}

template <class T>
LossOutput<T> infonce_loss(const EmbeddingBatch<T>& z_img, const EmbeddingBatch<T>& z_txt, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    std::ostringstream msg;
    msg << "tau must be positive and finite, got " << tau;
    throw Error(ErrorCode::InvalidTau, msg.str());
  }
  require_pair(z_img, z_txt);
  const std::size_t B = z_img.data.rows();
  if (B == 0 || z_txt.data.rows() != B) throw Error(ErrorCode::ShapeMismatch, "batches must have equal, nonzero rows");

  Matrix<T> sim = similarity_matrix(z_img, z_txt);
  const T inv_tau = static_cast<T>(1.0 / tau);
  for (T& v : sim.flat()) v *= inv_tau;  // logits

  // Row softmax (image queries) and column softmax (text queries). Each
  // per-item term is log Σ exp(l - max) + (max - l_ii), so uniform logits
  // give exactly log B.
  Matrix<T> p_row(B, B), p_col(B, B);
  std::vector<double> row_terms(B), col_terms(B);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < B; ++i) {
    T m = sim(i, 0);
    for (std::size_t j = 1; j < B; ++j) m = std::max(m, sim(i, j));
    T sum{};
    for (std::size_t j = 0; j < B; ++j) {
      const T e = std::exp(sim(i, j) - m);
      p_row(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < B; ++j) p_row(i, j) /= sum;
    row_terms[i] = static_cast<double>(std::log(sum)) + static_cast<double>(m - sim(i, i));
  }
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < B; ++j) {
    T m = sim(0, j);
    for (std::size_t i = 1; i < B; ++i) m = std::max(m, sim(i, j));
    T sum{};
    for (std::size_t i = 0; i < B; ++i) {
      const T e = std::exp(sim(i, j) - m);
      p_col(i, j) = e;
      sum += e;
    }
    for (std::size_t i = 0; i < B; ++i) p_col(i, j) /= sum;
    col_terms[j] = static_cast<double>(std::log(sum)) + static_cast<double>(m - sim(j, j));
  }

  double i2t = 0.0, t2i = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    i2t += row_terms[i];
    t2i += col_terms[i];
  }
  i2t /= static_cast<double>(B);
  t2i /= static_cast<double>(B);

  LossOutput<T> out;
  out.loss_i2t = static_cast<T>(i2t);
  out.loss_t2i = static_cast<T>(t2i);
  out.total_loss = static_cast<T>(0.5 * (i2t + t2i));

  // dL/dsim = (P_row - I + P_col - I) / (2 B τ)
  Matrix<T> g(B, B);
  const T coef = static_cast<T>(0.5 / (static_cast<double>(B) * tau));
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      T v = p_row(i, j) + p_col(i, j);
      if (i == j) v -= T{2};
      g(i, j) = v * coef;
    }
  kernels::matmul(g, z_txt.data, out.grad_z_img);
  kernels::matmul_tn(g, z_img.data, out.grad_z_txt);
  return out;
}

template <class T>
Matrix<T> normalize_backward(const Matrix<T>& grad_normalized, const Matrix<T>& raw) {
  if (!grad_normalized.same_shape(raw)) throw Error(ErrorCode::ShapeMismatch, "gradient and input shapes differ");
  Matrix<T> out(raw.rows(), raw.cols());
  const std::size_t rows = raw.rows(), d = raw.cols();
  bool zero = false;
#pragma omp parallel for schedule(static) reduction(|| : zero)
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = row_norm<T>(raw.row(r));
    if (n < kMinNorm) {
      zero = true;
      continue;
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(grad_normalized(r, c)) * static_cast<double>(raw(r, c));
    dot /= n;  // ⟨g, ẑ⟩
    for (std::size_t c = 0; c < d; ++c) {
      const double zc = static_cast<double>(raw(r, c)) / n;
      out(r, c) = static_cast<T>((static_cast<double>(grad_normalized(r, c)) - dot * zc) / n);
    }
  }
  if (zero) throw Error(ErrorCode::ZeroVector, "cannot backpropagate through a zero row");
  return out;
}

template EmbeddingBatch<float> normalize<float>(const Matrix<float>&);
template EmbeddingBatch<double> normalize<double>(const Matrix<double>&);
template Matrix<float> similarity_matrix<float>(const EmbeddingBatch<float>&, const EmbeddingBatch<float>&);
template Matrix<double> similarity_matrix<double>(const EmbeddingBatch<double>&, const EmbeddingBatch<double>&);
template LossOutput<float> infonce_loss<float>(const EmbeddingBatch<float>&, const EmbeddingBatch<float>&, double);
template LossOutput<double> infonce_loss<double>(const EmbeddingBatch<double>&, const EmbeddingBatch<double>&, double);
template Matrix<float> normalize_backward<float>(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> normalize_backward<double>(const Matrix<double>&, const Matrix<double>&);

}  // namespace frozen_align
