#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlmlab/attention_mask.hpp"
#include "mlmlab/ops.hpp"
#include "mlmlab/optim.hpp"
#include "mlmlab/tape.hpp"

namespace mlmlab {

enum class MaskPolicy : std::uint8_t { kBidirectional, kCausalLeftToRight, kCausalRightToLeft };

// One policy per layer, index 0 = the layer nearest the embeddings.
using MaskSchedule = std::vector<MaskPolicy>;

enum class PositionEncodingKind : std::uint8_t { kAbsent, kLearnable, kSinusoidal };

enum class Precision : std::uint8_t { k32, k64 };

enum class Preset : std::uint8_t { kBert, kDecbertSame, kDecbertDiff, kGptDecoder };

// Short config spellings: BI / LR / RL, absent / learnable / sinusoidal,
// 32 / 64, bert / decbert_same / decbert_diff / gpt_decoder.
std::string_view to_string(MaskPolicy p);
std::string_view to_string(PositionEncodingKind k);
std::string_view to_string(Precision p);
std::string_view to_string(Preset p);
MaskPolicy parse_mask_policy(std::string_view s);
PositionEncodingKind parse_pe_kind(std::string_view s);
Precision parse_precision(std::string_view s);
Preset parse_preset(std::string_view s);

// "LR,RL,BI" ↔ schedule.
std::string schedule_to_string(const MaskSchedule& schedule);
MaskSchedule parse_schedule(std::string_view s);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t vocab_size = 259;
  std::size_t max_seq_len = 32;
  MaskSchedule mask_schedule{MaskPolicy::kBidirectional, MaskPolicy::kBidirectional};
  PositionEncodingKind pe_kind = PositionEncodingKind::kLearnable;
  double dropout = 0.0;
  Precision precision = Precision::k32;
  double layer_norm_eps = 1e-5;

  std::size_t d_head() const { return d_model / n_heads; }

  // Throws ConfigError on any inconsistency.
  void validate() const;
};

// Rewrites base.mask_schedule for the named architecture; everything else is
// kept. decbert_* need at least two layers.
ModelConfig apply_preset(Preset preset, ModelConfig base);

// Bidirectional: all pairs; left-to-right: j <= i; right-to-left: j >= i.
AttentionMask build_attention_mask(MaskPolicy policy, std::size_t n);

// PE[i, 2j] = sin(i / 10000^(2j/d)), PE[i, 2j+1] = cos(i / 10000^(2j/d)).
// Throws ConfigError for odd d_model.
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t max_seq_len, std::size_t d_model);

template <typename T>
struct LayerParams {
  Tensor<T> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor<T> w_ffn1, b_ffn1, w_ffn2, b_ffn2;
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

// All weights. Linear maps are stored (d_in × d_out) and applied as x·W. The
// output head reuses token_embedding transposed plus output_bias.
template <typename T>
struct ModelParams {
  Tensor<T> token_embedding;                    // vocab × d_model
  std::optional<Tensor<T>> position_embedding;  // max_seq_len × d_model unless PE is absent
  bool position_embedding_frozen = false;       // sinusoidal tables never train
  std::vector<LayerParams<T>> layers;
  Tensor<T> output_bias;  // vocab

  // normal(0, stddev) weights, zero biases, unit LayerNorm gain. Sinusoidal
  // tables are filled exactly and never marked trainable.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed, double stddev = 0.02);

  // Visits every tensor in checkpoint order. `trainable` is false only for
  // a sinusoidal table; `decay` is false for biases and LayerNorm tensors.
  void for_each(const std::function<void(const std::string& name, Tensor<T>& tensor,
                                         bool trainable, bool decay)>& fn);

  std::vector<OptimParam<T>> trainable();
  std::size_t parameter_count();
  void zero_grad();
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

// h_i = TE(x_i) + PE(i), or TE(x_i) without position encoding. tokens holds
// `batch` sequences of equal length back to back.
template <typename T>
NodeId embed_input(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
                   std::span<const TokenId> tokens, std::size_t batch);

// Per head softmax_masked(Q_i K_iᵀ / √d_k) V_i, heads concatenated, then W_O.
template <typename T>
NodeId multi_head_attention(Tape<T>& tape, LayerParams<T>& layer, const ModelConfig& config,
                            NodeId x, std::size_t batch, const AttentionMask& mask);

// Post-LN: y = LN(x + MHA(x)); z = LN(y + FFN(y)), FFN = GELU(y W1 + b1) W2 + b2.
template <typename T>
NodeId encoder_layer_forward(Tape<T>& tape, LayerParams<T>& layer, const ModelConfig& config,
                             NodeId x, std::size_t batch, const AttentionMask& mask,
                             const ForwardOptions& options = {}, std::uint64_t layer_index = 0);

// Embedding plus every layer with its scheduled mask: (batch·seq × d_model).
template <typename T>
NodeId encode(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
              std::span<const TokenId> tokens, std::size_t batch,
              const ForwardOptions& options = {});

// Tied head: hidden · TEᵀ + output_bias.
template <typename T>
NodeId output_logits(Tape<T>& tape, ModelParams<T>& params, NodeId hidden);

// Inference convenience: logits (batch·seq × vocab) without gradients.
template <typename T>
Tensor<T> model_forward(ModelParams<T>& params, const ModelConfig& config,
                        std::span<const TokenId> tokens, std::size_t batch = 1);

}  // namespace mlmlab
