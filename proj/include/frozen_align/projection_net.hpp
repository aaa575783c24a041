#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "frozen_align/matrix.hpp"
#include "frozen_align/random.hpp"

namespace frozen_align {

/// Shape and regularization of the text-side projection MLP.
///
/// Widths chain input_dim → hidden_dim × (num_layers-1) → output_dim. Every
/// hidden block is Linear → BatchNorm → ReLU → Dropout; the last layer is a
/// bare Linear so the embedding is unconstrained before normalization.
struct ProjectionConfig {
  std::size_t input_dim = 4096;
  std::size_t hidden_dim = 4096;
  std::size_t output_dim = 768;
  std::size_t num_layers = 4;
  double dropout_p = 0.2;
  std::uint64_t seed = 0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  /// Off only in test harnesses that need a plain Linear/ReLU stack.
  bool batch_norm = true;

  /// Throws InvalidConfig.
  void validate() const;

  /// (fan_in, fan_out) per linear layer.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const;

  friend bool operator==(const ProjectionConfig&, const ProjectionConfig&) = default;
};

/// Trainable scalars: weights, biases, BatchNorm scale and shift.
std::uint64_t param_count(const ProjectionConfig& config);

enum class Mode { train, eval };

template <class T>
struct LinearLayer {
  Matrix<T> weight;  // fan_out × fan_in
  Matrix<T> bias;    // 1 × fan_out
};

template <class T>
struct BatchNormLayer {
  Matrix<T> gamma;
  Matrix<T> beta;
  Matrix<T> running_mean;
  Matrix<T> running_var;
};

/// Handle to one trainable tensor. Weight decay applies to weights only.
template <class T>
struct ParamRef {
  std::string name;
  Matrix<T>* value;
  bool decay;
};

/// Activations kept from a train-mode forward pass for backprop.
template <class T>
struct LayerCache {
  std::uint64_t generation = 0;
  std::size_t batch = 0;
  std::vector<Matrix<T>> inputs;      // input of each linear layer
  std::vector<Matrix<T>> normalized;  // BatchNorm x-hat per hidden block
  std::vector<Matrix<T>> inv_std;     // 1×hidden per hidden block
  std::vector<Matrix<T>> gates;       // ReLU indicator times dropout scale
};

/// Gradients in `BasicProjectionNet::parameters()` order.
template <class T>
struct ParamGrads {
  std::vector<Matrix<T>> grads;
  /// Gradient w.r.t. the network input; filled only on request.
  Matrix<T> input_grad;
};

template <class T>
struct ForwardResult {
  Matrix<T> output;
  std::optional<LayerCache<T>> cache;
};

template <class T>
class BasicProjectionNet {
 public:
  /// Fan-in scaled normal init (std = sqrt(2/fan_in)), zero biases, γ=1,
  /// β=0, running stats (0, 1). Deterministic in `config.seed`.
  explicit BasicProjectionNet(const ProjectionConfig& config);

  const ProjectionConfig& config() const noexcept { return config_; }

  /// Train mode uses batch statistics, updates running statistics, draws
  /// fresh dropout masks (inverted scaling) and returns a cache. Eval mode
  /// is a pure function of parameters and input.
  ForwardResult<T> forward(const Matrix<T>& batch, Mode mode);

  ParamGrads<T> backward(const LayerCache<T>& cache, const Matrix<T>& upstream, bool want_input_grad = false) const;

  std::vector<ParamRef<T>> parameters();
  std::vector<const Matrix<T>*> parameters() const;

  std::vector<LinearLayer<T>>& linears() noexcept { return linears_; }
  const std::vector<LinearLayer<T>>& linears() const noexcept { return linears_; }
  std::vector<BatchNormLayer<T>>& batch_norms() noexcept { return norms_; }
  const std::vector<BatchNormLayer<T>>& batch_norms() const noexcept { return norms_; }

  Rng& dropout_rng() noexcept { return dropout_rng_; }
  const Rng& dropout_rng() const noexcept { return dropout_rng_; }

 private:
  ProjectionConfig config_;
  std::vector<LinearLayer<T>> linears_;
  std::vector<BatchNormLayer<T>> norms_;
  Rng dropout_rng_;
  std::uint64_t generation_ = 0;
};

using ProjectionNet = BasicProjectionNet<float>;

}  // namespace frozen_align
