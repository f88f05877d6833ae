#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mlmlab/model.hpp"
#include "mlmlab/objectives.hpp"
#include "mlmlab/optim.hpp"

namespace mlmlab {

// Run configuration. The text form is one `key = value` per line with `#`
// comments; keys are the field names below, model fields included
// (n_layers, d_model, mask_schedule, pe_kind, ...).
struct TrainConfig {
  Objective objective = Objective::kMlm;
  std::optional<Preset> preset;  // when set, decides model.mask_schedule
  ModelConfig model;
  std::size_t seq_len = 32;  // window length read from the shard
  std::size_t batch_size = 32;
  std::uint64_t total_steps = 5000;
  std::uint64_t warmup_steps = 500;
  double peak_lr = 1e-3;
  double end_lr = 0.0;
  double lr_power = 1.0;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_epsilon = 1e-6;
  double grad_clip = 0.5;  // 0 disables clipping
  double mask_rate = 0.15;
  std::uint64_t seed = 1;
  std::uint64_t eval_interval = 500;        // 0: evaluate only after the last step
  std::uint64_t checkpoint_interval = 0;    // 0: checkpoint only after the last step
  std::uint64_t eval_max_batches = 0;       // 0: the whole validation shard
  std::string train_shard;
  std::string valid_shard;
  std::string output_dir;  // empty: keep logs and checkpoints in memory only

  // Applies the preset, then checks every field. Throws ConfigError.
  void finalize();
  void validate() const;

  LrSchedule schedule() const;
  MlmSpec mlm_spec() const;
  // Tokens per model input: seq_len for MLM, seq_len - 1 for CLM.
  std::size_t input_len() const;
};

// Fixed key order; doubles in shortest round-trip form.
std::string serialize_config(const TrainConfig& config);
// Unknown keys, duplicates and malformed values throw ConfigError naming the
// line. The result is finalized.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::string& path);

// Applies one `key = value` pair; used by the parser and CLI overrides.
void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);

}  // namespace mlmlab
