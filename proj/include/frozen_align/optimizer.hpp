#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "frozen_align/matrix.hpp"

namespace frozen_align {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
};

/// Zero moments shaped like `params`.
template <class T>
AdamState<T> make_adam_state(const AdamConfig& config, std::span<Matrix<T>* const> params);

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping; throws NonFiniteGradient.
template <class T>
double clip_global_norm(std::span<Matrix<T>> grads, double max_norm);

/// One bias-corrected Adam update with decoupled weight decay
/// (p ← p·(1 − lr·wd) for tensors flagged in `decay`, then the Adam delta).
template <class T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, const std::vector<bool>& decay,
               AdamState<T>& state);

}  // namespace frozen_align
