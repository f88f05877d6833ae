// mlmlab: corpus preparation, training, evaluation and analysis probes.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mlmlab/checkpoint.hpp"
#include "mlmlab/data.hpp"
#include "mlmlab/probes.hpp"
#include "mlmlab/trainer.hpp"

namespace {

using namespace mlmlab;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path + ": write failed");
}

void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string resume;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig config = load_config(a.config);
  apply_overrides(config, a.overrides);
  if (a.seed) config.seed = *a.seed;
  if (!a.output_dir.empty()) config.output_dir = a.output_dir;
  config.finalize();
  TrainOptions options;
  if (!a.resume.empty()) options.resume_from = a.resume;
  const std::uint64_t every = std::max<std::uint64_t>(1, config.total_steps / 20);
  if (!a.quiet) {
    options.on_step = [&](const LossEntry& e) {
      if (e.step % every == 0 || e.step == config.total_steps) {
        std::fprintf(stderr, "step %llu  loss %.4f nats  lr %.3g  %.1fs\n",
                     static_cast<unsigned long long>(e.step), e.train_loss, e.lr, e.wall_clock_s);
      }
    };
    options.on_eval = [](const EvalEntry& e) {
      std::fprintf(stderr, "step %llu  valid %.4f nats  ppl %.4f\n",
                   static_cast<unsigned long long>(e.step), e.valid_loss, e.valid_ppl);
    };
  }
  LossLog log = config.model.precision == Precision::k64 ? train<double>(config, options).log
                                                         : train<float>(config, options).log;
  if (config.output_dir.empty()) std::cout << loss_csv(log);
  if (!log.eval_entries.empty()) {
    const auto& e = log.eval_entries.back();
    std::printf("valid_loss_nats=%.6f valid_ppl=%.6f\n", e.valid_loss, e.valid_ppl);
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string shard;
  std::optional<std::size_t> max_batches;
};

template <typename T>
EvalResult eval_checkpoint(const EvalArgs& a) {
  Checkpoint<T> ck = load_checkpoint<T>(a.checkpoint);
  if (a.max_batches) ck.config.eval_max_batches = *a.max_batches;
  return evaluate_ppl(ck.params, ck.config, read_shard(a.shard));
}

int run_eval(const EvalArgs& a) {
  const TrainConfig config = peek_checkpoint_config(a.checkpoint);
  const EvalResult r = config.model.precision == Precision::k64 ? eval_checkpoint<double>(a)
                                                                : eval_checkpoint<float>(a);
  std::printf("valid_loss_nats,valid_ppl,tokens\n%.6f,%.6f,%zu\n", r.mean_nll, r.ppl, r.tokens);
  return kExitOk;
}

struct ProbeArgs {
  std::string checkpoint;
  std::string config;
  std::vector<std::string> overrides;
  std::string kind = "equivariance";
  std::string permutation = "uniform";
  std::size_t trials = 200;
  std::size_t seq_len = 16;
  double threshold = 1e-4;
  std::uint64_t seed = 0;
  std::optional<double> init_std;
  std::string output;
};

template <typename T>
int probe_with(ModelParams<T>& params, const TrainConfig& config, const ProbeArgs& a,
               const std::string& model_id) {
  if (a.kind == "causal_flow") {
    Rng rng(derive_seed({a.seed, static_cast<std::uint64_t>(SeedStream::kProbe), 2}));
    std::vector<TokenId> tokens(a.seq_len);
    for (auto& t : tokens) t = static_cast<TokenId>(rng.below(ByteTokenizer::kDataTokens));
    const CausalFlowReport r = causal_flow_check(params, config.model, tokens, a.seed);
    emit(a.output, "model_id,schedule,status,unreachable_pairs,summary\n" + model_id + ',' +
                       schedule_to_string(config.model.mask_schedule) + ',' +
                       (r.vacuous ? "vacuous" : r.passed ? "pass" : "fail") + ',' +
                       std::to_string(r.checks) + ',' + r.summary() + '\n');
    return r.passed ? kExitOk : kExitRuntime;
  }
  ProbeOptions options;
  options.n_trials = a.trials;
  options.seed = a.seed;
  options.seq_len = a.seq_len;
  options.threshold = a.threshold;
  options.permutation = a.permutation == "adjacent" ? PermutationKind::kAdjacentSwap
                                                    : PermutationKind::kUniform;
  const ProbeResult r = equivariance_report(params, config.model, options, model_id);
  emit(a.output, probe_csv(std::span(&r, 1)));
  return kExitOk;
}

int run_probe(const ProbeArgs& a) {
  if (a.checkpoint.empty() == a.config.empty()) {
    throw UsageError("probe needs exactly one of --checkpoint or --config");
  }
  if (!a.checkpoint.empty()) {
    const TrainConfig config = peek_checkpoint_config(a.checkpoint);
    const std::string id = std::filesystem::path(a.checkpoint).stem().string();
    if (config.model.precision == Precision::k64) {
      auto ck = load_checkpoint<double>(a.checkpoint);
      return probe_with(ck.params, ck.config, a, id);
    }
    auto ck = load_checkpoint<float>(a.checkpoint);
    return probe_with(ck.params, ck.config, a, id);
  }
  TrainConfig config = load_config(a.config);
  apply_overrides(config, a.overrides);
  config.finalize();
  const std::string id = config.preset ? std::string(to_string(*config.preset))
                                       : schedule_to_string(config.model.mask_schedule);
  const double stddev = a.init_std.value_or(probe_weight_stddev(config.model));
  if (config.model.precision == Precision::k64) {
    auto params = ModelParams<double>::init(config.model, a.seed, stddev);
    return probe_with(params, config, a, id);
  }
  auto params = ModelParams<float>::init(config.model, a.seed, stddev);
  return probe_with(params, config, a, id);
}

struct StagesArgs {
  std::string log;
  std::size_t window = 50;
  std::optional<double> theta_plateau;
  std::optional<double> theta_dive;
  double plateau_fraction = 0.02;
  double dive_fraction = 0.10;
  std::string output;
};

int run_stages(const StagesArgs& a) {
  const LossLog log = parse_loss_csv(slurp(a.log));
  const StageThresholds rel = relative_thresholds(log, a.window, a.plateau_fraction, a.dive_fraction);
  const StageReport r = detect_stages(log, a.window, a.theta_plateau.value_or(rel.plateau),
                                      a.theta_dive.value_or(rel.dive));
  emit(a.output, stage_csv(r));
  return kExitOk;
}

struct MatrixArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool quiet = false;
};

int run_matrix(const MatrixArgs& a) {
  MatrixSpec spec = parse_matrix(slurp(a.config));
  if (a.seed) spec.base.seed = *a.seed;
  if (!a.output_dir.empty()) spec.base.output_dir = a.output_dir;
  const auto rows = run_experiment_matrix(spec, [&](const MatrixRow& r) {
    if (a.quiet) return;
    if (r.ok) {
      std::fprintf(stderr, "%s: valid ppl %.4f, plateau %llu steps, %.1fs\n", r.cell.name.c_str(),
                   r.valid_ppl, static_cast<unsigned long long>(r.stages.plateau_length),
                   r.wall_clock_s);
    } else {
      std::fprintf(stderr, "%s: failed: %s\n", r.cell.name.c_str(), r.error.c_str());
    }
  });
  emit(a.output, matrix_csv(rows));
  const bool any_failed = std::any_of(rows.begin(), rows.end(), [](const MatrixRow& r) { return !r.ok; });
  return any_failed ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mlmlab: masked / causal language-model lab. Losses are natural-log nats; ppl = exp(loss)."};
  app.require_subcommand(1);
  app.allow_windows_style_options(false);

  std::string bin_in, bin_out;
  auto* binarize = app.add_subcommand("binarize", "Text file (one document per line) to shard");
  binarize->add_option("--input", bin_in, "UTF-8 text file")->required();
  binarize->add_option("--output", bin_out, "Shard path")->required();

  SyntheticSpec synth_spec;
  std::string synth_out;
  std::string split = "train";
  auto* synth = app.add_subcommand("synth", "Generate the key/value synthetic corpus");
  synth->add_option("--output", synth_out, "Shard path")->required();
  synth->add_option("--n-keys", synth_spec.n_keys, "Key alphabet size")->capture_default_str();
  synth->add_option("--seq-len", synth_spec.seq_len, "Tokens per sequence (even)")->capture_default_str();
  synth->add_option("--n-sequences", synth_spec.n_sequences, "Number of sequences")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Seed for the pairing and the draws")->capture_default_str();
  synth->add_option("--split", split, "train, valid, or a number; same pairing, different draws")
      ->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  train_cmd->add_option("--config", train_args.config, "Run config (key = value lines)")->required();
  train_cmd->add_option("--set", train_args.overrides, "Override a config key: key=value")->take_all();
  train_cmd->add_option("--resume", train_args.resume, "Checkpoint to continue from");
  train_cmd->add_option("--output-dir", train_args.output_dir, "Logs and checkpoints directory");
  train_cmd->add_option("--seed", train_args.seed, "Overrides the config seed");
  train_cmd->add_flag("--quiet", train_args.quiet, "No progress on stderr");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Validation loss and perplexity of a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--shard", eval_args.shard, "Validation shard")->required();
  eval->add_option("--max-batches", eval_args.max_batches, "Limit the number of batches");

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "Permutation and causal-flow probes");
  probe->add_option("--checkpoint", probe_args.checkpoint, "Probe trained weights");
  probe->add_option("--config", probe_args.config, "Probe fresh weights for this config");
  probe->add_option("--set", probe_args.overrides, "Override a config key: key=value")->take_all();
  probe->add_option("--kind", probe_args.kind, "equivariance or causal_flow")
      ->check(CLI::IsMember({"equivariance", "causal_flow"}))
      ->capture_default_str();
  probe->add_option("--permutation", probe_args.permutation, "uniform or adjacent")
      ->check(CLI::IsMember({"uniform", "adjacent"}))
      ->capture_default_str();
  probe->add_option("--trials", probe_args.trials, "Random trials")->capture_default_str();
  probe->add_option("--seq-len", probe_args.seq_len, "Probe sequence length")->capture_default_str();
  probe->add_option("--threshold", probe_args.threshold, "Verdict threshold")->capture_default_str();
  probe->add_option("--seed", probe_args.seed, "Seed for weights (with --config) and trials")
      ->capture_default_str();
  probe->add_option("--init-std", probe_args.init_std,
                    "Weight stddev with --config (default 1/sqrt(d_model))");
  probe->add_option("--output", probe_args.output, "CSV path (default stdout)");

  StagesArgs stages_args;
  auto* stages = app.add_subcommand("stages", "Four-stage analysis of a train-loss CSV");
  stages->add_option("--log", stages_args.log, "train_log.csv")->required();
  stages->add_option("--window", stages_args.window, "Smoothing window W in logged steps")
      ->capture_default_str();
  stages->add_option("--theta-plateau", stages_args.theta_plateau, "Absolute threshold, loss per step");
  stages->add_option("--theta-dive", stages_args.theta_dive, "Absolute threshold, loss per step");
  stages->add_option("--plateau-fraction", stages_args.plateau_fraction,
                     "Relative threshold: fraction of the total drop per 1000 steps")
      ->capture_default_str();
  stages->add_option("--dive-fraction", stages_args.dive_fraction,
                     "Relative threshold: fraction of the total drop per 1000 steps")
      ->capture_default_str();
  stages->add_option("--output", stages_args.output, "CSV path (default stdout)");

  MatrixArgs matrix_args;
  auto* matrix = app.add_subcommand("matrix", "Train a grid of presets and PE kinds");
  matrix->add_option("--config", matrix_args.config, "Matrix config: run config plus cell lines")
      ->required();
  matrix->add_option("--output", matrix_args.output, "Comparison CSV (default stdout)");
  matrix->add_option("--output-dir", matrix_args.output_dir, "Per-cell logs and checkpoints");
  matrix->add_option("--seed", matrix_args.seed, "Overrides the base seed");
  matrix->add_flag("--quiet", matrix_args.quiet, "No progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*binarize) {
      binarize_file(bin_in, bin_out);
      const CorpusShard s = read_shard(bin_out);
      std::printf("tokens=%zu documents=%zu\n", s.tokens.size(), s.boundaries.size());
    } else if (*synth) {
      if (split == "train") synth_spec.split = 0;
      else if (split == "valid") synth_spec.split = 1;
      else synth_spec.split = std::stoull(split);
      write_shard(synth_out, generate_synthetic(synth_spec));
      std::printf("tokens=%zu sequences=%zu\n", synth_spec.n_sequences * synth_spec.seq_len,
                  synth_spec.n_sequences);
    } else if (*train_cmd) {
      return run_train(train_args);
    } else if (*eval) {
      return run_eval(eval_args);
    } else if (*probe) {
      return run_probe(probe_args);
    } else if (*stages) {
      return run_stages(stages_args);
    } else if (*matrix) {
      return run_matrix(matrix_args);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
