#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mlmlab/data.hpp"
#include "mlmlab/model.hpp"
#include "mlmlab/rng.hpp"

namespace mlmlab {

enum class Objective : std::uint8_t { kMlm, kClm };

std::string_view to_string(Objective o);  // "mlm" / "clm"
Objective parse_objective(std::string_view s);

struct MlmSpec {
  double mask_rate = 0.15;
  double p_mask_token = 0.8;
  double p_random_token = 0.1;
  double p_keep = 0.1;
  TokenId mask_token_id = ByteTokenizer::kMask;
  TokenId pad_token_id = ByteTokenizer::kPad;
  TokenId ignore_marker = kIgnoreIndex;
  std::size_t n_data_tokens = ByteTokenizer::kDataTokens;  // random replacements draw from [0, n)

  void validate() const;
};

struct LmBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> inputs;   // batch × seq_len
  std::vector<TokenId> targets;  // kIgnoreIndex where nothing is predicted
  Objective objective = Objective::kMlm;

  std::size_t target_count() const;
};

// Each position is selected with probability mask_rate; selected inputs
// become the mask token, a random data token, or stay as they are. If no
// position is selected the whole draw is repeated once, after which
// position 0 is selected.
LmBatch apply_mlm_masking(const TokenBlock& block, const MlmSpec& spec, Rng& rng);

// inputs = tokens[0..n-1), targets = tokens[1..n) per row.
LmBatch clm_shift(const TokenBlock& block);

// Mean NLL over the predicted positions. The output head only runs on the
// rows that carry a target.
template <typename T>
NodeId batch_loss(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
                  const LmBatch& batch, const ForwardOptions& options = {});

struct NllSum {
  double total = 0.0;  // nats
  std::size_t count = 0;
};

// Per-token NLL of a batch without gradients.
template <typename T>
NllSum batch_nll(ModelParams<T>& params, const ModelConfig& config, const LmBatch& batch);

}  // namespace mlmlab
