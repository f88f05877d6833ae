// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "mlmlab/kernels.hpp"
#include "mlmlab/kernels_reference.hpp"
#include "mlmlab/model.hpp"
#include "mlmlab/rng.hpp"

using namespace mlmlab;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
  return v;
}

template <bool kReference>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * k, 1);
  const auto b = random_values(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (kReference) {
      kernels::reference::gemm<float>(m, n, k, a.data(), kernels::Trans::kNo, b.data(),
                                      kernels::Trans::kYes, c.data(), false);
    } else {
      kernels::gemm<float>(m, n, k, a.data(), kernels::Trans::kNo, b.data(), kernels::Trans::kYes,
                           c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
}

template <bool kReference>
void BM_BatchedGemm(benchmark::State& state) {
  // Attention scores: (batch·heads) × seq × seq from seq × d_head operands.
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 32, dk = 16;
  const auto q = random_values(batch * n * dk, 3);
  const auto kt = random_values(batch * n * dk, 4);
  std::vector<float> s(batch * n * n);
  for (auto _ : state) {
    if constexpr (kReference) {
      kernels::reference::batched_gemm<float>(batch, n, n, dk, q.data(), n * dk, kernels::Trans::kNo,
                                              kt.data(), n * dk, kernels::Trans::kYes, s.data(), false);
    } else {
      kernels::batched_gemm<float>(batch, n, n, dk, q.data(), n * dk, kernels::Trans::kNo, kt.data(),
                                   n * dk, kernels::Trans::kYes, s.data(), false);
    }
    benchmark::DoNotOptimize(s.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * batch * n * n * dk));
}

template <bool kReference>
void BM_SoftmaxMasked(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 32;
  const auto scores = random_values(rows * n, 5);
  const auto mask = build_attention_mask(MaskPolicy::kCausalLeftToRight, n);
  std::vector<float> p(rows * n);
  for (auto _ : state) {
    if constexpr (kReference) {
      kernels::reference::softmax_masked<float>(rows, n, scores.data(), mask.allowed.data(), p.data());
    } else {
      kernels::softmax_masked<float>(rows, n, scores.data(), mask.allowed.data(), p.data());
    }
    benchmark::DoNotOptimize(p.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * n));
}

template <bool kReference>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  const auto x = random_values(rows * d, 6);
  const std::vector<float> gamma(d, 1.0f), beta(d, 0.0f);
  std::vector<float> y(rows * d), xhat(rows * d), inv(rows);
  for (auto _ : state) {
    if constexpr (kReference) {
      kernels::reference::layer_norm_forward<float>(rows, d, x.data(), gamma.data(), beta.data(), 1e-5f,
                                                    y.data());
    } else {
      kernels::layer_norm_forward<float>(rows, d, x.data(), gamma.data(), beta.data(), 1e-5f, y.data(),
                                         xhat.data(), inv.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * d));
}

template <bool kReference>
void BM_Gelu(benchmark::State& state) {
  const auto count = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(count, 7);
  std::vector<float> y(count);
  for (auto _ : state) {
    if constexpr (kReference) {
      kernels::reference::gelu_forward<float>(count, x.data(), y.data());
    } else {
      kernels::gelu_forward<float>(count, x.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(count));
}

// Shapes from a training step at batch 32, seq 32, d_model 64, d_ffn 256.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({1024, 64, 64})->Args({1024, 256, 64})->Args({1024, 64, 256})->Args({160, 259, 64});
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Apply(gemm_shapes);
BENCHMARK(BM_BatchedGemm<false>)->Name("batched_gemm/parallel")->Arg(128);
BENCHMARK(BM_BatchedGemm<true>)->Name("batched_gemm/reference")->Arg(128);
BENCHMARK(BM_SoftmaxMasked<false>)->Name("softmax_masked/parallel")->Arg(4096);
BENCHMARK(BM_SoftmaxMasked<true>)->Name("softmax_masked/reference")->Arg(4096);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/parallel")->Arg(1024);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/reference")->Arg(1024);
BENCHMARK(BM_Gelu<false>)->Name("gelu/parallel")->Arg(1 << 18);
BENCHMARK(BM_Gelu<true>)->Name("gelu/reference")->Arg(1 << 18);

BENCHMARK_MAIN();
