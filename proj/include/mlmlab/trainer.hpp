#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlmlab/checkpoint.hpp"
#include "mlmlab/data.hpp"
#include "mlmlab/train_config.hpp"

namespace mlmlab {

struct LossEntry {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double wall_clock_s = 0.0;
};

struct EvalEntry {
  std::uint64_t step = 0;
  double valid_loss = 0.0;
  double valid_ppl = 0.0;
};

struct LossLog {
  std::vector<LossEntry> entries;
  std::vector<EvalEntry> eval_entries;
};

// `step,train_loss,lr,wall_clock_s` and `step,valid_loss,valid_ppl`.
std::string loss_csv(const LossLog& log);
std::string eval_csv(const LossLog& log);
// Reads the train-loss CSV back; eval_entries stay empty.
LossLog parse_loss_csv(std::string_view text);
std::vector<EvalEntry> parse_eval_csv(std::string_view text);

// Raised when the loss or the gradient norm stops being finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::uint64_t step, double lr, double grad_norm, const std::string& cause);
  std::uint64_t step;
  double lr;
  double grad_norm;  // last finite norm seen, NaN if none
};

struct TrainOptions {
  std::optional<std::string> resume_from;  // checkpoint path
  std::function<void(const LossEntry&)> on_step;
  std::function<void(const EvalEntry&)> on_eval;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  AdamState<T> adam;
  LossLog log;  // only the steps run by this call
  std::uint64_t step = 0;
};

// Step t (1-based) uses batch t-1 of the shuffled stream, lr_at(schedule, t)
// and an MLM masking seed derived from (seed, t-1). With output_dir set,
// writes train_log.csv, valid_log.csv and checkpoint files; a resumed run
// keeps the earlier CSV rows up to the checkpoint step.
template <typename T>
TrainResult<T> train(const TrainConfig& config, const TrainOptions& options = {});

// Shards are loaded once by the caller when several runs share them.
template <typename T>
TrainResult<T> train(const TrainConfig& config, const CorpusShard& train_shard,
                     const CorpusShard* valid_shard, const TrainOptions& options = {});

struct EvalResult {
  double mean_nll = 0.0;  // nats per predicted token
  double ppl = 0.0;       // exp(mean_nll)
  std::size_t tokens = 0;
};

// Fixed-order pass over the validation windows. MLM masking uses a seed that
// does not depend on the training seed, so every model sees the same inputs.
template <typename T>
EvalResult evaluate_ppl(ModelParams<T>& params, const TrainConfig& config,
                        const CorpusShard& valid_shard);

// Masked inputs and targets the evaluation uses for each validation batch.
std::vector<LmBatch> evaluation_batches(const TrainConfig& config, const CorpusShard& valid_shard);

inline constexpr std::uint64_t kEvalMaskingSeed = 0x65766131;

std::string checkpoint_path(const std::string& output_dir, std::uint64_t step);
std::string last_checkpoint_path(const std::string& output_dir);

struct StageReport {
  std::uint64_t starting_end = 0;
  std::uint64_t plateau_end = 0;
  std::uint64_t diving_end = 0;
  std::uint64_t plateau_length = 0;
  // Mean loss change per step inside each stage (0 for an empty stage).
  double slope_starting = 0.0;
  double slope_plateau = 0.0;
  double slope_diving = 0.0;
  double slope_convergence = 0.0;
};

struct StageThresholds {
  double plateau = 0.0;  // loss per step
  double dive = 0.0;
};

// theta = fraction × (first smoothed loss − minimum smoothed loss) per 1000 steps.
StageThresholds relative_thresholds(const LossLog& log, std::size_t window,
                                    double plateau_fraction = 0.02, double dive_fraction = 0.10);

// Centered moving average of width `window` (truncated at the ends), slope
// (s[t+W] − s[t−W]) / (step[t+W] − step[t−W]); the boundaries are the first
// crossings described on StageReport. Throws if fewer than 2·window entries.
StageReport detect_stages(const LossLog& log, std::size_t window, double theta_plateau,
                          double theta_dive);

// `starting_end,plateau_end,diving_end,plateau_length` with a header row.
std::string stage_csv(const StageReport& report);

// Mean train loss over the last `fraction` of logged steps.
double tail_mean_loss(const LossLog& log, double fraction = 0.1);

struct MatrixCell {
  std::string name;
  Preset preset = Preset::kBert;
  PositionEncodingKind pe_kind = PositionEncodingKind::kAbsent;
  std::optional<std::uint64_t> seed;  // defaults to the base seed
  std::optional<Objective> objective;
};

// Base config plus cells. Text form: a run config with extra
// `cell = name,preset,pe_kind[,seed[,objective]]` lines.
struct MatrixSpec {
  TrainConfig base;
  std::vector<MatrixCell> cells;
  std::size_t stage_window = 50;
};

MatrixSpec parse_matrix(std::string_view text);

struct MatrixRow {
  MatrixCell cell;
  bool ok = false;
  std::string error;
  double valid_loss = 0.0;
  double valid_ppl = 0.0;
  double tail_train_loss = 0.0;
  StageReport stages;
  double wall_clock_s = 0.0;
  LossLog log;
};

// Trains each cell with the base config's data, budget and (unless the cell
// overrides it) seed; a failing cell is reported and the rest still run.
// With base.output_dir set, each cell writes into <output_dir>/<name>.
std::vector<MatrixRow> run_experiment_matrix(const MatrixSpec& spec,
                                             const std::function<void(const MatrixRow&)>& on_row = {});

// name,preset,pe_kind,seed,objective,status,valid_loss,valid_ppl,tail_train_loss,
// starting_end,plateau_end,diving_end,plateau_length,wall_clock_s
std::string matrix_csv(const std::vector<MatrixRow>& rows);

// The config a cell trains with.
TrainConfig cell_config(const TrainConfig& base, const MatrixCell& cell);

}  // namespace mlmlab
