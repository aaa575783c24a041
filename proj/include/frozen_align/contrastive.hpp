#pragma once

#include "frozen_align/matrix.hpp"

namespace frozen_align {

/// Rows of `data` are embeddings; `normalized` certifies unit L2 rows.
template <class T>
struct EmbeddingBatch {
  Matrix<T> data;
  bool normalized = false;
};

template <class T>
struct LossOutput {
  T total_loss{};
  T loss_t2i{};  // text queries ranked against images (columns of img·txtᵀ)
  T loss_i2t{};  // image queries ranked against texts (rows)
  Matrix<T> grad_z_img;
  Matrix<T> grad_z_txt;
};

inline constexpr double kDefaultTau = 0.07;

/// Divides each row by its L2 norm; throws ZeroVector for rows with norm < 1e-12.
template <class T>
EmbeddingBatch<T> normalize(const Matrix<T>& batch);

/// (i, j) = ⟨a_i, b_j⟩. Both batches must be normalized and share d.
template <class T>
Matrix<T> similarity_matrix(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b);

/// Symmetric InfoNCE over matched rows, mean over items and over the two
/// directions, with gradients w.r.t. both normalized batches.
template <class T>
LossOutput<T> infonce_loss(const EmbeddingBatch<T>& z_img, const EmbeddingBatch<T>& z_txt, double tau = kDefaultTau);

/// Chain rule through row normalization: g ↦ (I − ẑẑᵀ)g / ‖raw‖ per row.
template <class T>
Matrix<T> normalize_backward(const Matrix<T>& grad_normalized, const Matrix<T>& raw);

}  // namespace frozen_align
