#include "frozen_align/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "frozen_align/error.hpp"

namespace frozen_align {

template <class T>
AdamState<T> make_adam_state(const AdamConfig& config, std::span<Matrix<T>* const> params) {
  AdamState<T> state;
  state.config = config;
  for (const Matrix<T>* p : params) {
    state.m.emplace_back(p->rows(), p->cols());
    state.v.emplace_back(p->rows(), p->cols());
  }
  return state;
}

template <class T>
double clip_global_norm(std::span<Matrix<T>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error(ErrorCode::InvalidConfig, "max_norm must be positive");
  // Fixed-size chunks summed in order keep the norm independent of threading.
  constexpr std::size_t kChunk = 1 << 16;
  double sq = 0.0;
  for (const auto& g : grads) {
    const T* d = g.data();
    const std::size_t n = g.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> partial(chunks, 0.0);
#pragma omp parallel for schedule(static)
    for (std::size_t q = 0; q < chunks; ++q) {
      const std::size_t end = std::min(n, (q + 1) * kChunk);
      double acc = 0.0;
      for (std::size_t i = q * kChunk; i < end; ++i) acc += static_cast<double>(d[i]) * static_cast<double>(d[i]);
      partial[q] = acc;
    }
    for (double part : partial) sq += part;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorCode::NonFiniteGradient, "gradient norm is not finite");
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      T* d = g.data();
      const std::size_t n = g.size();
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) d[i] *= scale;
    }
  }
  return norm;
}

template <class T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, const std::vector<bool>& decay,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != decay.size() || params.size() != state.m.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter, gradient and state counts differ");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t]->same_shape(grads[t]) || !params[t]->same_shape(state.m[t]))
      throw Error(ErrorCode::ShapeMismatch, "tensor " + std::to_string(t) + " shape mismatch");
    for (T g : grads[t].flat())
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "tensor " + std::to_string(t));
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T one_minus_b1 = static_cast<T>(1.0 - c.beta1), one_minus_b2 = static_cast<T>(1.0 - c.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  const T decay_factor = T{1} - static_cast<T>(c.lr * c.weight_decay);

  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params[k]->data();
    const T* g = grads[k].data();
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    const std::size_t n = params[k]->size();
    const bool wd = decay[k] && c.weight_decay != 0.0;
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      if (wd) p[i] *= decay_factor;
      m[i] = b1 * m[i] + one_minus_b1 * g[i];
      v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template AdamState<float> make_adam_state<float>(const AdamConfig&, std::span<Matrix<float>* const>);
template AdamState<double> make_adam_state<double>(const AdamConfig&, std::span<Matrix<double>* const>);
template double clip_global_norm<float>(std::span<Matrix<float>>, double);
template double clip_global_norm<double>(std::span<Matrix<double>>, double);
template void adam_step<float>(std::span<Matrix<float>* const>, std::span<const Matrix<float>>, const std::vector<bool>&,
                               AdamState<float>&);
template void adam_step<double>(std::span<Matrix<double>* const>, std::span<const Matrix<double>>,
                                const std::vector<bool>&, AdamState<double>&);

}  // namespace frozen_align
