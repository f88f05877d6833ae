#pragma once

// Inner loops of the numeric core. The functions here are OpenMP-parallel
// over independent output rows or matrices; each output element is produced
// by one thread with a fixed summation order, so results are bit-identical
// for any worker count. kernels_reference.hpp holds the serial versions the
// tests compare against.

#include <cstddef>
#include <cstdint>

namespace mlmlab::kernels {

enum class Trans : std::uint8_t { kNo, kYes };

// C (m×n) = op(A) · op(B), or C += op(A) · op(B) when accumulate is set.
// op(A) is m×k: A is stored m×k (kNo) or k×m (kYes). Likewise op(B) is k×n,
// stored k×n (kNo) or n×k (kYes). All buffers row-major and contiguous.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, Trans ta, const T* b,
          Trans tb, T* c, bool accumulate);

// `batch` independent gemms. Operand strides are m*k / k*n / m*n; a stride of
// zero broadcasts that operand across the batch.
template <typename T>
void batched_gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t stride_a, Trans ta, const T* b, std::size_t stride_b, Trans tb, T* c,
                  bool accumulate);

// Row softmax over `rows` rows of length n, where row r uses mask row r % n.
// Disallowed entries come out exactly 0. Throws NumericError on a row with
// no allowed entry.
template <typename T>
void softmax_masked(std::size_t rows, std::size_t n, const T* scores, const std::uint8_t* allowed,
                    T* probs);

// dS = P ⊙ (dP − rowsum(dP ⊙ P)), accumulated into dscores.
template <typename T>
void softmax_backward(std::size_t rows, std::size_t n, const T* probs, const T* dprobs,
                      T* dscores);

// Per-row normalization; saves x̂ and 1/σ for the backward pass.
template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t d, const T* x, const T* gamma, const T* beta,
                        T eps, T* y, T* xhat, T* inv_std);

// dx is accumulated; dgamma/dbeta are accumulated in row order.
template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t d, const T* dy, const T* xhat,
                         const T* inv_std, const T* gamma, T* dx, T* dgamma, T* dbeta);

template <typename T>
void gelu_forward(std::size_t count, const T* x, T* y);

// dx += dy · gelu'(x)
template <typename T>
void gelu_backward(std::size_t count, const T* x, const T* dy, T* dx);

// out[j] += sum over rows of x[r, j], rows taken in order.
template <typename T>
void column_sum(std::size_t rows, std::size_t cols, const T* x, T* out);

}  // namespace mlmlab::kernels
