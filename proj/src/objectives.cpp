#include "mlmlab/objectives.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "mlmlab/errors.hpp"

namespace mlmlab {

std::string_view to_string(Objective o) { return o == Objective::kMlm ? "mlm" : "clm"; }

Objective parse_objective(std::string_view s) {
  if (s == "mlm") return Objective::kMlm;
  if (s == "clm") return Objective::kClm;
  throw ConfigError("unknown objective '" + std::string(s) + "' (expected mlm or clm)");
}

void MlmSpec::validate() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mlm: mask_rate must lie in (0, 1)");
  if (p_mask_token < 0 || p_random_token < 0 || p_keep < 0 ||
      std::abs(p_mask_token + p_random_token + p_keep - 1.0) > 1e-9) {
    throw ConfigError("mlm: corruption probabilities must be non-negative and sum to 1");
  }
  if (n_data_tokens == 0) throw ConfigError("mlm: n_data_tokens must be positive");
  const auto n = static_cast<TokenId>(n_data_tokens);
  if (mask_token_id < n || pad_token_id < n) {
    throw ConfigError("mlm: mask and pad ids must lie outside the data-token range");
  }
}

std::size_t LmBatch::target_count() const {
  std::size_t n = 0;
  for (TokenId t : targets) n += t != kIgnoreIndex;
  return n;
}

namespace {

void corrupt(TokenId original, const MlmSpec& spec, Rng& rng, TokenId& input) {
  const double r = rng.uniform();
  if (r < spec.p_mask_token) {
    input = spec.mask_token_id;
  } else if (r < spec.p_mask_token + spec.p_random_token) {
    input = static_cast<TokenId>(rng.below(spec.n_data_tokens));
  } else {
    input = original;
  }
}

}  // namespace

LmBatch apply_mlm_masking(const TokenBlock& block, const MlmSpec& spec, Rng& rng) {
  spec.validate();
  if (block.tokens.empty()) throw std::invalid_argument("apply_mlm_masking: empty input");
  if (block.tokens.size() != block.batch * block.seq_len) {
    throw ShapeError("apply_mlm_masking: token count does not match batch × seq_len");
  }
  for (TokenId t : block.tokens) {
    if (t < 0 || t >= static_cast<TokenId>(spec.n_data_tokens)) {
      throw std::invalid_argument("apply_mlm_masking: reserved or invalid id " + std::to_string(t));
    }
  }
  LmBatch out;
  out.batch = block.batch;
  out.seq_len = block.seq_len;
  out.objective = Objective::kMlm;
  const std::size_t n = block.tokens.size();
  for (int attempt = 0; attempt < 2; ++attempt) {
    out.inputs = block.tokens;
    out.targets.assign(n, spec.ignore_marker);
    std::size_t selected = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() >= spec.mask_rate) continue;
      ++selected;
      out.targets[i] = block.tokens[i];
      corrupt(block.tokens[i], spec, rng, out.inputs[i]);
    }
    if (selected > 0) return out;
  }
  out.targets[0] = block.tokens[0];
  corrupt(block.tokens[0], spec, rng, out.inputs[0]);
  return out;
}

LmBatch clm_shift(const TokenBlock& block) {
  if (block.seq_len < 2) throw std::invalid_argument("clm_shift: seq_len must be >= 2");
  if (block.tokens.size() != block.batch * block.seq_len) {
    throw ShapeError("clm_shift: token count does not match batch × seq_len");
  }
  LmBatch out;
  out.batch = block.batch;
  out.seq_len = block.seq_len - 1;
  out.objective = Objective::kClm;
  for (std::size_t b = 0; b < block.batch; ++b) {
    const TokenId* row = block.tokens.data() + b * block.seq_len;
    out.inputs.insert(out.inputs.end(), row, row + block.seq_len - 1);
    out.targets.insert(out.targets.end(), row + 1, row + block.seq_len);
  }
  return out;
}

namespace {

std::pair<std::vector<std::size_t>, std::vector<TokenId>> predicted_rows(const LmBatch& batch) {
  std::pair<std::vector<std::size_t>, std::vector<TokenId>> out;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    if (batch.targets[i] == kIgnoreIndex) continue;
    out.first.push_back(i);
    out.second.push_back(batch.targets[i]);
  }
  return out;
}

}  // namespace

template <typename T>
NodeId batch_loss(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
                  const LmBatch& batch, const ForwardOptions& options) {
  if (batch.inputs.size() != batch.targets.size()) {
    throw ShapeError("batch_loss: inputs and targets differ in size");
  }
  const auto [rows, targets] = predicted_rows(batch);
  if (rows.empty()) throw std::invalid_argument("batch_loss: batch has no targets");
  NodeId hidden = encode(tape, params, config, batch.inputs, batch.batch, options);
  NodeId logits = output_logits(tape, params, ops::gather_rows(tape, hidden, rows));
  return ops::cross_entropy(tape, logits, targets);
}

template <typename T>
NllSum batch_nll(ModelParams<T>& params, const ModelConfig& config, const LmBatch& batch) {
  Tape<T> tape(false);
  const auto [rows, targets] = predicted_rows(batch);
  NllSum out;
  if (rows.empty()) return out;
  NodeId hidden = encode(tape, params, config, batch.inputs, batch.batch);
  NodeId logits = output_logits(tape, params, ops::gather_rows(tape, hidden, rows));
  for (double v : ops::per_row_nll(tape.value(logits), targets)) out.total += v;
  out.count = rows.size();
  return out;
}

template NodeId batch_loss<float>(Tape<float>&, ModelParams<float>&, const ModelConfig&,
                                  const LmBatch&, const ForwardOptions&);
template NodeId batch_loss<double>(Tape<double>&, ModelParams<double>&, const ModelConfig&,
                                   const LmBatch&, const ForwardOptions&);
template NllSum batch_nll<float>(ModelParams<float>&, const ModelConfig&, const LmBatch&);
template NllSum batch_nll<double>(ModelParams<double>&, const ModelConfig&, const LmBatch&);

}  // namespace mlmlab
