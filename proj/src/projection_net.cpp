#include "frozen_align/projection_net.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "frozen_align/error.hpp"
#include "frozen_align/kernels.hpp"

namespace frozen_align {

void ProjectionConfig::validate() const {
  std::ostringstream why;
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) why << "dims must be positive; ";
  if (num_layers < 2) why << "num_layers must be >= 2; ";
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) why << "dropout_p must lie in [0,1); ";
  if (!(bn_eps > 0.0)) why << "bn_eps must be positive; ";
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) why << "bn_momentum must lie in (0,1]; ";
  const auto msg = why.str();
  if (!msg.empty()) throw Error(ErrorCode::InvalidConfig, msg.substr(0, msg.size() - 2));
}

std::vector<std::pair<std::size_t, std::size_t>> ProjectionConfig::layer_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l + 1 < num_layers; ++l) {
    shapes.emplace_back(in, hidden_dim);
    in = hidden_dim;
  }
  shapes.emplace_back(in, output_dim);
  return shapes;
}

std::uint64_t param_count(const ProjectionConfig& config) {
  std::uint64_t n = 0;
  for (auto [fan_in, fan_out] : config.layer_shapes()) n += fan_in * fan_out + fan_out;
  if (config.batch_norm) n += (config.num_layers - 1) * 2 * config.hidden_dim;
  return n;
}

namespace {

std::atomic<std::uint64_t> g_generation{0};

constexpr std::size_t kColumnChunk = 128;

// Column statistics over the batch; rows are visited in order so the result
// does not depend on the thread count.
template <class T>
void batch_mean_var(const Matrix<T>& h, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t rows = h.rows(), cols = h.cols();
  mean.assign(cols, 0.0);
  var.assign(cols, 0.0);
  const std::size_t chunks = (cols + kColumnChunk - 1) / kColumnChunk;
#pragma omp parallel for schedule(static)
  for (std::size_t q = 0; q < chunks; ++q) {
    const std::size_t c0 = q * kColumnChunk, c1 = std::min(cols, c0 + kColumnChunk);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = c0; c < c1; ++c) mean[c] += static_cast<double>(h(r, c));
    for (std::size_t c = c0; c < c1; ++c) mean[c] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        const double d = static_cast<double>(h(r, c)) - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = c0; c < c1; ++c) var[c] /= static_cast<double>(rows);
  }
}

}  // namespace

template <class T>
BasicProjectionNet<T>::BasicProjectionNet(const ProjectionConfig& config) : config_(config) {
  config_.validate();
  Rng init_rng(derive_seed(config_.seed, 0));
  dropout_rng_.seed(derive_seed(config_.seed, 1));

  const auto shapes = config_.layer_shapes();
  for (auto [fan_in, fan_out] : shapes) {
    LinearLayer<T> layer{Matrix<T>(fan_out, fan_in), Matrix<T>(1, fan_out)};
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& w : layer.weight.flat()) w = static_cast<T>(std * standard_normal(init_rng));
    linears_.push_back(std::move(layer));
  }
  if (config_.batch_norm) {
    for (std::size_t l = 0; l + 1 < shapes.size(); ++l) {
      const std::size_t w = config_.hidden_dim;
      norms_.push_back({Matrix<T>(1, w, T{1}), Matrix<T>(1, w, T{0}), Matrix<T>(1, w, T{0}), Matrix<T>(1, w, T{1})});
    }
  }
}

template <class T>
ForwardResult<T> BasicProjectionNet<T>::forward(const Matrix<T>& batch, Mode mode) {
  if (batch.cols() != config_.input_dim) {
    throw Error(ErrorCode::WidthMismatch, "batch width " + std::to_string(batch.cols()) + " != input_dim " +
                                              std::to_string(config_.input_dim));
  }
  const bool train = mode == Mode::train;
  if (train && config_.batch_norm && batch.rows() < 2)
    throw Error(ErrorCode::BatchTooSmall, "train-mode BatchNorm needs at least 2 rows");

  const std::size_t B = batch.rows();
  const std::size_t hidden_blocks = linears_.size() - 1;
  ForwardResult<T> result;
  LayerCache<T>* cache = nullptr;
  if (train) {
    result.cache.emplace();
    cache = &*result.cache;
    cache->generation = ++g_generation;
    cache->batch = B;
    generation_ = cache->generation;
    cache->inputs.reserve(linears_.size());
  }

  const double p = config_.dropout_p;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  const T eps = static_cast<T>(config_.bn_eps);
  const double momentum = config_.bn_momentum;

  Matrix<T> x = batch;
  Matrix<T> h;
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    const auto& lin = linears_[l];
    kernels::matmul_nt(x, lin.weight, h);
    kernels::add_row_broadcast(h, lin.bias);
    if (train) cache->inputs.push_back(std::move(x));
    if (l == hidden_blocks) {
      result.output = std::move(h);
      break;
    }

    const std::size_t W = h.cols();
    if (config_.batch_norm) {
      auto& bn = norms_[l];
      std::vector<T> scale(W), shift(W);
      if (train) {
        std::vector<double> mean, var;
        batch_mean_var(h, mean, var);
        Matrix<T> inv_std(1, W);
        const double unbias = static_cast<double>(B) / static_cast<double>(B - 1);
        for (std::size_t c = 0; c < W; ++c) {
          inv_std(0, c) = static_cast<T>(1.0 / std::sqrt(var[c] + config_.bn_eps));
          bn.running_mean(0, c) =
              static_cast<T>((1.0 - momentum) * static_cast<double>(bn.running_mean(0, c)) + momentum * mean[c]);
          bn.running_var(0, c) = static_cast<T>((1.0 - momentum) * static_cast<double>(bn.running_var(0, c)) +
                                                momentum * var[c] * unbias);
        }
        Matrix<T> xhat(B, W);
        std::vector<T> mean_t(mean.begin(), mean.end());
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < B; ++r) {
          for (std::size_t c = 0; c < W; ++c) {
            const T xh = (h(r, c) - mean_t[c]) * inv_std(0, c);
            xhat(r, c) = xh;
            h(r, c) = bn.gamma(0, c) * xh + bn.beta(0, c);
          }
        }
        cache->normalized.push_back(std::move(xhat));
        cache->inv_std.push_back(std::move(inv_std));
      } else {
        for (std::size_t c = 0; c < W; ++c) {
          scale[c] = bn.gamma(0, c) / std::sqrt(bn.running_var(0, c) + eps);
          shift[c] = bn.beta(0, c) - bn.running_mean(0, c) * scale[c];
        }
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < B; ++r)
          for (std::size_t c = 0; c < W; ++c) h(r, c) = h(r, c) * scale[c] + shift[c];
      }
    }

    if (train) {
      Matrix<T> gate(B, W, T{1});
      if (p > 0.0) {
        // Masks are drawn serially so the stream is independent of threading.
        for (T& g : gate.flat()) g = uniform01(dropout_rng_) < p ? T{0} : keep_scale;
      }
#pragma omp parallel for schedule(static)
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          T& g = gate(r, c);
          if (!(h(r, c) > T{0})) g = T{0};
          h(r, c) *= g;
        }
      cache->gates.push_back(std::move(gate));
    } else {
      for (T& v : h.flat()) v = v > T{0} ? v : T{0};
    }
    x = std::move(h);
    h = Matrix<T>();
  }
  return result;
}

template <class T>
ParamGrads<T> BasicProjectionNet<T>::backward(const LayerCache<T>& cache, const Matrix<T>& upstream,
                                              bool want_input_grad) const {
  const std::size_t L = linears_.size();
  if (cache.generation != generation_ || cache.inputs.size() != L || cache.gates.size() != L - 1 ||
      (config_.batch_norm && cache.normalized.size() != L - 1)) {
    throw Error(ErrorCode::StaleCache, "cache does not come from this network's latest train-mode forward");
  }
  if (upstream.rows() != cache.batch || upstream.cols() != config_.output_dim) {
    throw Error(ErrorCode::StaleCache, "upstream gradient shape does not match cached batch");
  }
  const std::size_t B = cache.batch;
  const std::size_t per_layer = config_.batch_norm ? 4 : 2;

  ParamGrads<T> out;
  out.grads.resize(L * 2 + (config_.batch_norm ? (L - 1) * 2 : 0));
  auto slot = [&](std::size_t layer, std::size_t k) -> Matrix<T>& {
    // parameters() order: W, b, then γ, β for hidden blocks.
    return out.grads[layer * per_layer + k];
  };

  Matrix<T> dh = upstream;
  Matrix<T> dx;
  for (std::size_t l = L; l-- > 0;) {
    if (l + 1 < L) {
      // dh currently holds d(block output); undo ReLU·Dropout then BatchNorm.
      const Matrix<T>& gate = cache.gates[l];
      const std::size_t W = dh.cols();
#pragma omp parallel for schedule(static)
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t c = 0; c < W; ++c) dh(r, c) *= gate(r, c);

      if (config_.batch_norm) {
        const auto& bn = norms_[l];
        const Matrix<T>& xhat = cache.normalized[l];
        const Matrix<T>& inv_std = cache.inv_std[l];
        Matrix<T>& dgamma = slot(l, 2);
        Matrix<T>& dbeta = slot(l, 3);
        dgamma = Matrix<T>(1, W);
        dbeta = Matrix<T>(1, W);
        std::vector<T> sum_dxhat(W), sum_dxhat_xhat(W);
        const std::size_t chunks = (W + kColumnChunk - 1) / kColumnChunk;
#pragma omp parallel for schedule(static)
        for (std::size_t q = 0; q < chunks; ++q) {
          const std::size_t c0 = q * kColumnChunk, c1 = std::min(W, c0 + kColumnChunk);
          for (std::size_t r = 0; r < B; ++r)
            for (std::size_t c = c0; c < c1; ++c) {
              const T dy = dh(r, c);
              dgamma(0, c) += dy * xhat(r, c);
              dbeta(0, c) += dy;
            }
          for (std::size_t c = c0; c < c1; ++c) {
            sum_dxhat[c] = dbeta(0, c) * bn.gamma(0, c);
            sum_dxhat_xhat[c] = dgamma(0, c) * bn.gamma(0, c);
          }
        }
        const T inv_b = T{1} / static_cast<T>(B);
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < B; ++r)
          for (std::size_t c = 0; c < W; ++c) {
            const T dxhat = dh(r, c) * bn.gamma(0, c);
            dh(r, c) = inv_std(0, c) * inv_b *
                       (static_cast<T>(B) * dxhat - sum_dxhat[c] - xhat(r, c) * sum_dxhat_xhat[c]);
          }
      }
    }

    kernels::matmul_tn(dh, cache.inputs[l], slot(l, 0));
    kernels::column_sums(dh, slot(l, 1));
    if (l > 0 || want_input_grad) {
      kernels::matmul(dh, linears_[l].weight, dx);
      dh = std::move(dx);
      dx = Matrix<T>();
    }
  }
  if (want_input_grad) out.input_grad = std::move(dh);
  return out;
}

template <class T>
std::vector<ParamRef<T>> BasicProjectionNet<T>::parameters() {
  std::vector<ParamRef<T>> refs;
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    refs.push_back({p + ".weight", &linears_[l].weight, true});
    refs.push_back({p + ".bias", &linears_[l].bias, false});
    if (config_.batch_norm && l < norms_.size()) {
      refs.push_back({p + ".bn.gamma", &norms_[l].gamma, false});
      refs.push_back({p + ".bn.beta", &norms_[l].beta, false});
    }
  }
  return refs;
}

template <class T>
std::vector<const Matrix<T>*> BasicProjectionNet<T>::parameters() const {
  std::vector<const Matrix<T>*> refs;
  for (auto& r : const_cast<BasicProjectionNet*>(this)->parameters()) refs.push_back(r.value);
  return refs;
}

template class BasicProjectionNet<float>;
template class BasicProjectionNet<double>;

}  // namespace frozen_align
