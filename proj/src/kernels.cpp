#include "mlmlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "mlmlab/errors.hpp"

namespace mlmlab::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// C tile of MR rows × NR columns held in registers while k runs in
// ascending order. Every element starts from C (or zero) and adds
// a(i,k)·b(k,j) for k = 0, 1, ..., so the result matches the reference
// kernel term for term whatever the tiling.
template <typename T, std::size_t MR, std::size_t NR>
inline void gemm_tile(std::size_t k, const T* a, std::size_t a_row, std::size_t a_k, const T* b,
                      std::size_t n, T* c, bool accumulate) {
  T acc[MR][NR];
#pragma GCC unroll 8
  for (std::size_t r = 0; r < MR; ++r) {
#pragma omp simd
    for (std::size_t j = 0; j < NR; ++j) acc[r][j] = accumulate ? c[r * n + j] : T{0};
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* brow = b + kk * n;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * a_row + kk * a_k];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
#pragma GCC unroll 8
  for (std::size_t r = 0; r < MR; ++r) {
#pragma omp simd
    for (std::size_t j = 0; j < NR; ++j) c[r * n + j] = acc[r][j];
  }
}

// Rows [0, MR) of C: wide tiles, then a narrower tile, then single columns.
template <typename T, std::size_t MR>
inline void gemm_row_block(std::size_t n, std::size_t k, const T* a, std::size_t a_row,
                           std::size_t a_k, const T* b, T* c, bool accumulate) {
  constexpr std::size_t kWide = 128 / sizeof(T);
  constexpr std::size_t kNarrow = 64 / sizeof(T);
  std::size_t j = 0;
  for (; j + kWide <= n; j += kWide) {
    gemm_tile<T, MR, kWide>(k, a, a_row, a_k, b + j, n, c + j, accumulate);
  }
  for (; j + kNarrow <= n; j += kNarrow) {
    gemm_tile<T, MR, kNarrow>(k, a, a_row, a_k, b + j, n, c + j, accumulate);
  }
  for (; j < n; ++j) gemm_tile<T, MR, 1>(k, a, a_row, a_k, b + j, n, c + j, accumulate);
}

constexpr std::size_t kTileRows = 4;

// Rows [i0, i1) of C = op(A)·B with B row-major k×n.
template <typename T>
inline void gemm_rows(std::size_t i0, std::size_t i1, std::size_t m, std::size_t n, std::size_t k,
                      const T* a, Trans ta, const T* b, T* c, bool accumulate) {
  const std::size_t a_row = ta == Trans::kNo ? k : 1;
  const std::size_t a_k = ta == Trans::kNo ? 1 : m;
  std::size_t i = i0;
  for (; i + kTileRows <= i1; i += kTileRows) {
    gemm_row_block<T, kTileRows>(n, k, a + i * a_row, a_row, a_k, b, c + i * n, accumulate);
  }
  for (; i < i1; ++i) gemm_row_block<T, 1>(n, k, a + i * a_row, a_row, a_k, b, c + i * n, accumulate);
}

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// Single gemm on the calling thread.
template <typename T>
void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, Trans ta, const T* b,
                 Trans tb, T* c, bool accumulate, std::vector<T>& scratch) {
  const T* bk = b;
  if (tb == Trans::kYes) {
    scratch.resize(k * n);
    transpose_into(n, k, b, scratch.data());
    bk = scratch.data();
  }
  gemm_rows(0, m, m, n, k, a, ta, bk, c, accumulate);
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, Trans ta, const T* b, Trans tb,
          T* c, bool accumulate) {
  std::vector<T> transposed;
  const T* bk = b;
  if (tb == Trans::kYes) {
    transposed.resize(k * n);
    transpose_into(n, k, b, transposed.data());
    bk = transposed.data();
  }
  const auto blocks = static_cast<std::ptrdiff_t>((m + kTileRows - 1) / kTileRows);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kTileRows;
    gemm_rows(i0, std::min(m, i0 + kTileRows), m, n, k, a, ta, bk, c, accumulate);
  }
}

template <typename T>
void batched_gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t stride_a, Trans ta, const T* b, std::size_t stride_b, Trans tb, T* c,
                  bool accumulate) {
  const auto count = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel if (batch * m * n * k > kParallelWork)
  {
    std::vector<T> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t p = 0; p < count; ++p) {
      const auto up = static_cast<std::size_t>(p);
      gemm_serial(m, n, k, a + up * stride_a, ta, b + up * stride_b, tb, c + up * m * n,
                  accumulate, scratch);
    }
  }
}

template <typename T>
void softmax_masked(std::size_t rows, std::size_t n, const T* scores, const std::uint8_t* allowed,
                    T* probs) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
  bool empty_row = false;
#pragma omp parallel for schedule(static) if (rows * n > kParallelWork) reduction(|| : empty_row)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const T* s = scores + ur * n;
    const std::uint8_t* mask = allowed + (ur % n) * n;
    T* p = probs + ur * n;
    T row_max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j]) row_max = std::max(row_max, s[j]);
    }
    if (row_max == -std::numeric_limits<T>::infinity()) {
      empty_row = true;
      continue;
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T e = mask[j] ? std::exp(s[j] - row_max) : T{0};
      p[j] = e;
      sum += e;
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < n; ++j) p[j] *= inv;
  }
  if (empty_row) throw NumericError("softmax_masked: row with no allowed position");
}

template <typename T>
void softmax_backward(std::size_t rows, std::size_t n, const T* probs, const T* dprobs,
                      T* dscores) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * n > kParallelWork)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto off = static_cast<std::size_t>(r) * n;
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += probs[off + j] * dprobs[off + j];
    for (std::size_t j = 0; j < n; ++j) dscores[off + j] += probs[off + j] * (dprobs[off + j] - dot);
  }
}

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t d, const T* x, const T* gamma, const T* beta,
                        T eps, T* y, T* xhat, T* inv_std) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
  const T inv_d = T{1} / static_cast<T>(d);
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto off = static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += x[off + j];
    mean *= inv_d;
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = x[off + j] - mean;
      var += c * c;
    }
    var *= inv_d;
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (x[off + j] - mean) * is;
      xhat[off + j] = h;
      y[off + j] = gamma[j] * h + beta[j];
    }
  }
}

template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t d, const T* dy, const T* xhat,
                         const T* inv_std, const T* gamma, T* dx, T* dgamma, T* dbeta) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
  const T inv_d = T{1} / static_cast<T>(d);
  if (dx != nullptr) {
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
    for (std::ptrdiff_t r = 0; r < count; ++r) {
      const auto off = static_cast<std::size_t>(r) * d;
      T mean_g = 0;
      T mean_gx = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T g = dy[off + j] * gamma[j];
        mean_g += g;
        mean_gx += g * xhat[off + j];
      }
      mean_g *= inv_d;
      mean_gx *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const T g = dy[off + j] * gamma[j];
        dx[off + j] += inv_std[r] * (g - mean_g - xhat[off + j] * mean_gx);
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * d;
    if (dgamma != nullptr) {
      for (std::size_t j = 0; j < d; ++j) dgamma[j] += dy[off + j] * xhat[off + j];
    }
    if (dbeta != nullptr) {
      for (std::size_t j = 0; j < d; ++j) dbeta[j] += dy[off + j];
    }
  }
}

template <typename T>
void gelu_forward(std::size_t count, const T* x, T* y) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const auto total = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static) if (count > kParallelWork)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    const T v = x[i];
    y[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  }
}

template <typename T>
void gelu_backward(std::size_t count, const T* x, const T* dy, T* dx) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  const auto total = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static) if (count > kParallelWork)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    const T v = x[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
    dx[i] += dy[i] * (cdf + v * pdf);
  }
}

template <typename T>
void column_sum(std::size_t rows, std::size_t cols, const T* x, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * cols;
#pragma omp simd
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j];
  }
}

#define MLMLAB_INSTANTIATE_KERNELS(T)                                                             \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, Trans, const T*, Trans, \
                        T*, bool);                                                                \
  template void batched_gemm<T>(std::size_t, std::size_t, std::size_t, std::size_t, const T*,    \
                                std::size_t, Trans, const T*, std::size_t, Trans, T*, bool);      \
  template void softmax_masked<T>(std::size_t, std::size_t, const T*, const std::uint8_t*, T*);  \
  template void softmax_backward<T>(std::size_t, std::size_t, const T*, const T*, T*);           \
  template void layer_norm_forward<T>(std::size_t, std::size_t, const T*, const T*, const T*, T, \
                                      T*, T*, T*);                                                \
  template void layer_norm_backward<T>(std::size_t, std::size_t, const T*, const T*, const T*,   \
                                       const T*, T*, T*, T*);                                     \
  template void gelu_forward<T>(std::size_t, const T*, T*);                                      \
  template void gelu_backward<T>(std::size_t, const T*, const T*, T*);                           \
  template void column_sum<T>(std::size_t, std::size_t, const T*, T*);

MLMLAB_INSTANTIATE_KERNELS(float)
MLMLAB_INSTANTIATE_KERNELS(double)

#undef MLMLAB_INSTANTIATE_KERNELS

}  // namespace mlmlab::kernels
