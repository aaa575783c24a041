// Serial reference kernels against the blocked OpenMP kernels, plus one full
// training step at the production projection shape.

#include <benchmark/benchmark.h>

#include "frozen_align/contrastive.hpp"
#include "frozen_align/kernels.hpp"
#include "frozen_align/optimizer.hpp"
#include "frozen_align/projection_net.hpp"
#include "frozen_align/random.hpp"

using namespace frozen_align;

namespace {

Matrix<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<float> m(r, c);
  for (float& v : m.flat()) v = static_cast<float>(standard_normal(rng));
  return m;
}

void set_flops(benchmark::State& state, double m, double n, double k) {
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * m * n * k * static_cast<double>(state.iterations()) * 1e-9, benchmark::Counter::kIsRate);
}

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    kernels::reference::matmul(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, n, n, n);
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    kernels::matmul(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, n, n, n);
}

void BM_MatmulNtReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    kernels::reference::matmul_nt(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, n, n, n);
}

void BM_MatmulNtParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    kernels::matmul_nt(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, n, n, n);
}

// Forward + loss + backward + clip + Adam at batch B for the 4096→4096×3→768 net.
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  ProjectionConfig cfg;
  ProjectionNet net(cfg);
  auto params = net.parameters();
  std::vector<Matrix<float>*> ptrs;
  std::vector<bool> decay;
  for (auto& p : params) {
    ptrs.push_back(p.value);
    decay.push_back(p.decay);
  }
  auto adam = make_adam_state<float>(AdamConfig{}, ptrs);
  auto text = random_matrix(batch, cfg.input_dim, 3);
  auto vision = normalize(random_matrix(batch, cfg.output_dim, 4));
  for (auto _ : state) {
    auto fwd = net.forward(text, Mode::train);
    auto z_txt = normalize(fwd.output);
    auto loss = infonce_loss(vision, z_txt);
    auto upstream = normalize_backward(loss.grad_z_txt, fwd.output);
    auto grads = net.backward(*fwd.cache, upstream);
    clip_global_norm<float>(grads.grads, 1.0);
    adam_step<float>(ptrs, grads.grads, decay, adam);
    benchmark::DoNotOptimize(loss.total_loss);
  }
}

}  // namespace

BENCHMARK(BM_MatmulReference)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatmulParallel)->Arg(256)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatmulNtReference)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatmulNtParallel)->Arg(256)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->Arg(512)->Arg(4096)->Iterations(1)->Unit(benchmark::kSecond);

BENCHMARK_MAIN();
