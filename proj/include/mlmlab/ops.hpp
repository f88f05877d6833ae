#pragma once

// Differentiable operations. Each records its result on the tape together
// with the closure that maps the output gradient back to its inputs.

#include <cstdint>
#include <span>
#include <vector>

#include "mlmlab/attention_mask.hpp"
#include "mlmlab/kernels.hpp"
#include "mlmlab/tape.hpp"

namespace mlmlab {

using TokenId = std::int32_t;

// Target value for positions that carry no prediction.
inline constexpr TokenId kIgnoreIndex = -100;

namespace ops {

using kernels::Trans;

// Rank-2 (m×k)·(k×n), or batched rank-3 with a batch of 1 broadcasting.
// With tb == kYes, b holds op(B) transposed (n×k per matrix).
template <typename T>
NodeId matmul(Tape<T>& tape, NodeId a, NodeId b, Trans tb = Trans::kNo);

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b);

// x (.., d) + bias (d), broadcast over leading dimensions.
template <typename T>
NodeId add_bias(Tape<T>& tape, NodeId x, NodeId bias);

// x (rows × d) + table[r % seq_len] for every row r.
template <typename T>
NodeId add_position_rows(Tape<T>& tape, NodeId x, NodeId table, std::size_t seq_len);

template <typename T>
NodeId scale(Tape<T>& tape, NodeId x, T factor);

// Exact-erf GELU.
template <typename T>
NodeId gelu(Tape<T>& tape, NodeId x);

// Normalizes over the last dimension, then gamma ⊙ x̂ + beta.
template <typename T>
NodeId layer_norm(Tape<T>& tape, NodeId x, NodeId gamma, NodeId beta, T eps);

// scores: n×n or batch×n×n. Every matrix in the batch uses the same mask.
template <typename T>
NodeId softmax_masked(Tape<T>& tape, NodeId scores, const AttentionMask& mask);

// Rows of table (vocab × d) selected by ids.
template <typename T>
NodeId embedding(Tape<T>& tape, NodeId table, std::span<const TokenId> ids);

// (batch·seq × heads·dk) → (batch·heads × seq × dk)
template <typename T>
NodeId split_heads(Tape<T>& tape, NodeId x, std::size_t batch, std::size_t heads);

// Inverse of split_heads.
template <typename T>
NodeId merge_heads(Tape<T>& tape, NodeId x, std::size_t batch);

// Inverted dropout; rate 0 returns x itself.
template <typename T>
NodeId dropout(Tape<T>& tape, NodeId x, double rate, std::uint64_t seed);

template <typename T>
NodeId gather_rows(Tape<T>& tape, NodeId x, std::span<const std::size_t> rows);

// Mean natural-log NLL over rows whose target is not kIgnoreIndex.
// Throws if every target is ignored or a target is outside the vocabulary.
template <typename T>
NodeId cross_entropy(Tape<T>& tape, NodeId logits, std::span<const TokenId> targets);

template <typename T>
NodeId sum(Tape<T>& tape, NodeId x);

// Per-row NLL without recording; kIgnoreIndex rows give 0.
template <typename T>
std::vector<double> per_row_nll(const Tensor<T>& logits, std::span<const TokenId> targets);

}  // namespace ops
}  // namespace mlmlab
