#pragma once

// Serial, unoptimized counterparts of kernels.hpp. They are the oracles for
// the kernel tests and the baseline in the kernel benchmark.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>

#include "mlmlab/errors.hpp"
#include "mlmlab/kernels.hpp"

namespace mlmlab::kernels::reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, Trans ta, const T* b, Trans tb,
          T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        sum += av * bv;
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void batched_gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t stride_a, Trans ta, const T* b, std::size_t stride_b, Trans tb, T* c,
                  bool accumulate) {
  for (std::size_t p = 0; p < batch; ++p) {
    reference::gemm(m, n, k, a + p * stride_a, ta, b + p * stride_b, tb, c + p * m * n, accumulate);
  }
}

template <typename T>
void softmax_masked(std::size_t rows, std::size_t n, const T* scores, const std::uint8_t* allowed,
                    T* probs) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* mask = allowed + (r % n) * n;
    T row_max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j] && scores[r * n + j] > row_max) row_max = scores[r * n + j];
    }
    if (row_max == -std::numeric_limits<T>::infinity()) {
      throw NumericError("softmax_masked: row with no allowed position");
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j]) sum += std::exp(scores[r * n + j] - row_max);
    }
    for (std::size_t j = 0; j < n; ++j) {
      probs[r * n + j] = mask[j] ? std::exp(scores[r * n + j] - row_max) / sum : T{0};
    }
  }
}

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t d, const T* x, const T* gamma, const T* beta,
                        T eps, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += x[r * d + j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mean) * (x[r * d + j] - mean);
    var /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      y[r * d + j] = gamma[j] * (x[r * d + j] - mean) / std::sqrt(var + eps) + beta[j];
    }
  }
}

template <typename T>
void gelu_forward(std::size_t count, const T* x, T* y) {
  for (std::size_t i = 0; i < count; ++i) {
    y[i] = x[i] * T{0.5} * (T{1} + std::erf(x[i] / static_cast<T>(std::numbers::sqrt2)));
  }
}

}  // namespace mlmlab::kernels::reference
