#include "mlmlab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "binary_io.hpp"
#include "mlmlab/errors.hpp"
#include "mlmlab/rng.hpp"

namespace mlmlab {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_seconds(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 3);
  return std::string(buf, ptr);
}

std::vector<std::vector<std::string_view>> csv_rows(std::string_view text, std::string_view header) {
  std::vector<std::vector<std::string_view>> rows;
  bool first = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    if (first) {
      if (line != header) throw IoError("csv: expected header '" + std::string(header) + "'");
      first = false;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

template <typename U>
U csv_number(std::string_view s) {
  U out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw IoError("csv: bad number '" + std::string(s) + "'");
  }
  return out;
}

constexpr std::string_view kLossHeader = "step,train_loss,lr,wall_clock_s";
constexpr std::string_view kEvalHeader = "step,valid_loss,valid_ppl";

}  // namespace

std::string loss_csv(const LossLog& log) {
  std::string out(kLossHeader);
  out += '\n';
  for (const auto& e : log.entries) {
    out += std::to_string(e.step) + ',' + format_double(e.train_loss) + ',' + format_double(e.lr) +
           ',' + format_seconds(e.wall_clock_s) + '\n';
  }
  return out;
}

std::string eval_csv(const LossLog& log) {
  std::string out(kEvalHeader);
  out += '\n';
  for (const auto& e : log.eval_entries) {
    out += std::to_string(e.step) + ',' + format_double(e.valid_loss) + ',' +
           format_double(e.valid_ppl) + '\n';
  }
  return out;
}

LossLog parse_loss_csv(std::string_view text) {
  LossLog log;
  for (const auto& f : csv_rows(text, kLossHeader)) {
    if (f.size() != 4) throw IoError("csv: expected 4 fields per row");
    log.entries.push_back({csv_number<std::uint64_t>(f[0]), csv_number<double>(f[1]),
                           csv_number<double>(f[2]), csv_number<double>(f[3])});
    if (log.entries.size() > 1 && log.entries.back().step <= log.entries[log.entries.size() - 2].step) {
      throw IoError("csv: steps must be strictly increasing");
    }
  }
  return log;
}

std::vector<EvalEntry> parse_eval_csv(std::string_view text) {
  std::vector<EvalEntry> out;
  for (const auto& f : csv_rows(text, kEvalHeader)) {
    if (f.size() != 3) throw IoError("csv: expected 3 fields per row");
    out.push_back({csv_number<std::uint64_t>(f[0]), csv_number<double>(f[1]),
                   csv_number<double>(f[2])});
    if (out.size() > 1 && out.back().step <= out[out.size() - 2].step) {
      throw IoError("csv: steps must be strictly increasing");
    }
  }
  return out;
}

TrainingDiverged::TrainingDiverged(std::uint64_t step_, double lr_, double grad_norm_,
                                   const std::string& cause)
    : NumericError("training diverged at step " + std::to_string(step_) + " (lr " +
                   format_double(lr_) + ", grad norm " + format_double(grad_norm_) + "): " + cause),
      step(step_),
      lr(lr_),
      grad_norm(grad_norm_) {}

std::string checkpoint_path(const std::string& output_dir, std::uint64_t step) {
  return (std::filesystem::path(output_dir) / ("checkpoint_" + std::to_string(step) + ".bin")).string();
}

std::string last_checkpoint_path(const std::string& output_dir) {
  return (std::filesystem::path(output_dir) / "checkpoint_last.bin").string();
}

std::vector<LmBatch> evaluation_batches(const TrainConfig& config, const CorpusShard& valid_shard) {
  std::vector<LmBatch> out;
  const std::size_t n = window_count(valid_shard, config.seq_len);
  if (n == 0) throw ConfigError("evaluate: validation shard holds no full window");
  const MlmSpec spec = config.mlm_spec();
  std::uint64_t index = 0;
  for (std::size_t start = 0; start < n; start += config.batch_size, ++index) {
    if (config.eval_max_batches != 0 && index == config.eval_max_batches) break;
    TokenBlock block;
    block.batch = std::min(config.batch_size, n - start);
    block.seq_len = config.seq_len;
    const auto first = valid_shard.tokens.begin() + static_cast<std::ptrdiff_t>(start * config.seq_len);
    block.tokens.assign(first, first + static_cast<std::ptrdiff_t>(block.batch * config.seq_len));
    if (config.objective == Objective::kMlm) {
      Rng rng(derive_seed({kEvalMaskingSeed, static_cast<std::uint64_t>(SeedStream::kMasking), index}));
      out.push_back(apply_mlm_masking(block, spec, rng));
    } else {
      out.push_back(clm_shift(block));
    }
  }
  return out;
}

template <typename T>
EvalResult evaluate_ppl(ModelParams<T>& params, const TrainConfig& config,
                        const CorpusShard& valid_shard) {
  NllSum sum;
  for (const LmBatch& b : evaluation_batches(config, valid_shard)) {
    const NllSum part = batch_nll(params, config.model, b);
    sum.total += part.total;
    sum.count += part.count;
  }
  EvalResult r;
  r.tokens = sum.count;
  r.mean_nll = sum.total / static_cast<double>(sum.count);
  r.ppl = std::exp(r.mean_nll);
  return r;
}

namespace {

std::string comparable_config(TrainConfig c) {
  c.output_dir.clear();
  c.checkpoint_interval = 0;
  return serialize_config(c);
}

template <typename Row>
void keep_until(std::vector<Row>& rows, std::uint64_t step) {
  std::erase_if(rows, [&](const Row& r) { return r.step > step; });
}

void write_logs(const std::string& dir, const LossLog& earlier, const LossLog& log) {
  LossLog merged = earlier;
  merged.entries.insert(merged.entries.end(), log.entries.begin(), log.entries.end());
  merged.eval_entries.insert(merged.eval_entries.end(), log.eval_entries.begin(),
                             log.eval_entries.end());
  detail::write_file((std::filesystem::path(dir) / "train_log.csv").string(), loss_csv(merged));
  detail::write_file((std::filesystem::path(dir) / "valid_log.csv").string(), eval_csv(merged));
}

LossLog read_earlier_logs(const std::string& dir, std::uint64_t step) {
  LossLog earlier;
  const auto train_path = std::filesystem::path(dir) / "train_log.csv";
  const auto valid_path = std::filesystem::path(dir) / "valid_log.csv";
  if (std::filesystem::exists(train_path)) {
    earlier.entries = parse_loss_csv(detail::read_file(train_path.string())).entries;
  }
  if (std::filesystem::exists(valid_path)) {
    earlier.eval_entries = parse_eval_csv(detail::read_file(valid_path.string()));
  }
  keep_until(earlier.entries, step);
  keep_until(earlier.eval_entries, step);
  return earlier;
}

template <typename T>
double global_norm(std::span<const OptimParam<T>> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

}  // namespace

template <typename T>
TrainResult<T> train(const TrainConfig& config, const CorpusShard& train_shard,
                     const CorpusShard* valid_shard, const TrainOptions& options) {
  config.validate();
  if (train_shard.vocab_size > config.model.vocab_size) {
    throw ConfigError("train: shard vocab " + std::to_string(train_shard.vocab_size) +
                      " exceeds model vocab " + std::to_string(config.model.vocab_size));
  }
  TrainResult<T> r;
  std::uint64_t start = 0;
  if (options.resume_from) {
    Checkpoint<T> ck = load_checkpoint<T>(*options.resume_from);
    if (comparable_config(ck.config) != comparable_config(config)) {
      throw ConfigError("train: checkpoint " + *options.resume_from +
                        " was written with a different config");
    }
    if (ck.step > config.total_steps) throw ConfigError("train: checkpoint is past total_steps");
    r.params = std::move(ck.params);
    r.adam = std::move(ck.adam);
    start = ck.step;
  } else {
    r.params = ModelParams<T>::init(config.model, config.seed);
    r.adam = AdamState<T>::zeros_like(r.params.trainable(), config.adam_beta1, config.adam_beta2,
                                      config.adam_epsilon);
  }
  const auto trainable = r.params.trainable();
  const std::span<const OptimParam<T>> trainable_span(trainable);
  const LrSchedule schedule = config.schedule();
  const MlmSpec mlm = config.mlm_spec();
  const bool write = !config.output_dir.empty();
  LossLog earlier;
  if (write) {
    std::filesystem::create_directories(config.output_dir);
    if (start > 0) earlier = read_earlier_logs(config.output_dir, start);
  }

  const double clock_offset = earlier.entries.empty() ? 0.0 : earlier.entries.back().wall_clock_s;
  const auto t0 = std::chrono::steady_clock::now();
  double last_norm = std::nan("");
  BatchStream stream(train_shard, config.seq_len, config.batch_size, config.seed);
  for (std::uint64_t t = start + 1; t <= config.total_steps; ++t) {
    const TokenBlock block = stream.batch(t - 1);
    LmBatch batch;
    if (config.objective == Objective::kMlm) {
      Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(SeedStream::kMasking), t - 1}));
      batch = apply_mlm_masking(block, mlm, rng);
    } else {
      batch = clm_shift(block);
    }
    const double lr = lr_at(schedule, t);
    r.params.zero_grad();
    double loss_value = 0.0;
    try {
      Tape<T> tape;
      const ForwardOptions fo{
          true, derive_seed({config.seed, static_cast<std::uint64_t>(SeedStream::kDropout), t})};
      const NodeId loss = batch_loss(tape, r.params, config.model, batch, fo);
      loss_value = static_cast<double>(tape.value(loss)[0]);
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw TrainingDiverged(t, lr, last_norm, e.what());
    }
    const double norm = config.grad_clip > 0.0 ? clip_global_norm(trainable_span, config.grad_clip)
                                               : global_norm(trainable_span);
    if (!std::isfinite(norm)) throw TrainingDiverged(t, lr, norm, "non-finite gradient");
    last_norm = norm;
    adam_step(trainable_span, r.adam, lr, config.weight_decay);

    const double elapsed =
        clock_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.log.entries.push_back({t, loss_value, lr, elapsed});
    if (options.on_step) options.on_step(r.log.entries.back());

    const bool eval_now = (config.eval_interval != 0 && t % config.eval_interval == 0) ||
                          t == config.total_steps;
    if (valid_shard != nullptr && eval_now) {
      const EvalResult ev = evaluate_ppl(r.params, config, *valid_shard);
      r.log.eval_entries.push_back({t, ev.mean_nll, ev.ppl});
      if (options.on_eval) options.on_eval(r.log.eval_entries.back());
    }
    if (write && config.checkpoint_interval != 0 && t % config.checkpoint_interval == 0) {
      save_checkpoint(checkpoint_path(config.output_dir, t), config, r.params, r.adam, t);
      write_logs(config.output_dir, earlier, r.log);
    }
  }
  r.step = std::max(start, config.total_steps);
  if (write) {
    save_checkpoint(last_checkpoint_path(config.output_dir), config, r.params, r.adam, r.step);
    write_logs(config.output_dir, earlier, r.log);
  }
  return r;
}

template <typename T>
TrainResult<T> train(const TrainConfig& config, const TrainOptions& options) {
  if (config.train_shard.empty()) throw ConfigError("train: train_shard is not set");
  const CorpusShard train_shard = read_shard(config.train_shard);
  std::optional<CorpusShard> valid;
  if (!config.valid_shard.empty()) valid = read_shard(config.valid_shard);
  return train<T>(config, train_shard, valid ? &*valid : nullptr, options);
}

StageThresholds relative_thresholds(const LossLog& log, std::size_t window,
                                    double plateau_fraction, double dive_fraction) {
  if (log.entries.empty()) throw std::invalid_argument("relative_thresholds: empty log");
  std::vector<double> loss;
  for (const auto& e : log.entries) loss.push_back(e.train_loss);
  const std::size_t n = loss.size();
  const std::size_t half = window / 2;
  double first = 0.0;
  double lowest = INFINITY;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, t + window - half);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += loss[i];
    s /= static_cast<double>(hi - lo);
    if (t == 0) first = s;
    lowest = std::min(lowest, s);
  }
  const double drop = std::max(0.0, first - lowest);
  return {plateau_fraction * drop / 1000.0, dive_fraction * drop / 1000.0};
}

StageReport detect_stages(const LossLog& log, std::size_t window, double theta_plateau,
                          double theta_dive) {
  const std::size_t n = log.entries.size();
  if (window == 0) throw std::invalid_argument("detect_stages: window must be positive");
  if (n < 2 * window + 1) {
    throw std::invalid_argument("detect_stages: log has " + std::to_string(n) +
                                " entries, needs at least " + std::to_string(2 * window + 1));
  }
  std::vector<double> smooth(n);
  const std::size_t half = window / 2;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, t + window - half);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += log.entries[i].train_loss;
    smooth[t] = s / static_cast<double>(hi - lo);
  }
  auto step = [&](std::size_t t) { return static_cast<double>(log.entries[t].step); };
  auto slope = [&](std::size_t t) {
    return (smooth[t + window] - smooth[t - window]) / (step(t + window) - step(t - window));
  };
  const std::size_t first = window;
  const std::size_t last = n - 1 - window;
  const std::size_t final_index = n - 1;
  auto find = [&](std::size_t from, auto pred) {
    for (std::size_t t = from; t <= last; ++t) {
      if (pred(slope(t))) return t;
    }
    return final_index;
  };
  const std::size_t s_end = find(first, [&](double s) { return s > -theta_dive; });
  const std::size_t p_end =
      s_end == final_index ? final_index : find(s_end + 1, [&](double s) { return s < -theta_dive; });
  const std::size_t d_end =
      p_end == final_index ? final_index : find(p_end + 1, [&](double s) { return s > -theta_plateau; });

  auto stage_slope = [&](std::size_t a, std::size_t b) {
    return b > a ? (smooth[b] - smooth[a]) / (step(b) - step(a)) : 0.0;
  };
  StageReport r;
  r.starting_end = log.entries[s_end].step;
  r.plateau_end = log.entries[p_end].step;
  r.diving_end = log.entries[d_end].step;
  r.plateau_length = r.plateau_end - r.starting_end;
  r.slope_starting = stage_slope(0, s_end);
  r.slope_plateau = stage_slope(s_end, p_end);
  r.slope_diving = stage_slope(p_end, d_end);
  r.slope_convergence = stage_slope(d_end, final_index);
  return r;
}

std::string stage_csv(const StageReport& r) {
  return "starting_end,plateau_end,diving_end,plateau_length\n" + std::to_string(r.starting_end) +
         ',' + std::to_string(r.plateau_end) + ',' + std::to_string(r.diving_end) + ',' +
         std::to_string(r.plateau_length) + '\n';
}

double tail_mean_loss(const LossLog& log, double fraction) {
  if (log.entries.empty()) throw std::invalid_argument("tail_mean_loss: empty log");
  const std::size_t n = log.entries.size();
  const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * n)));
  double s = 0.0;
  for (std::size_t i = n - count; i < n; ++i) s += log.entries[i].train_loss;
  return s / static_cast<double>(count);
}

MatrixSpec parse_matrix(std::string_view text) {
  MatrixSpec spec;
  std::string rest;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    std::string_view body = line.substr(0, line.find('#'));
    const auto eq = body.find('=');
    std::string_view key = eq == std::string_view::npos ? body : body.substr(0, eq);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.remove_suffix(1);
    while (!key.empty() && (key.front() == ' ' || key.front() == '\t')) key.remove_prefix(1);
    std::string value;
    if (eq != std::string_view::npos) {
      for (char c : body.substr(eq + 1)) {
        if (c != ' ' && c != '\t' && c != '\r') value.push_back(c);
      }
    }
    const std::string where = "matrix line " + std::to_string(line_no) + ": ";
    if (key == "cell") {
      std::vector<std::string> f;
      std::stringstream ss(value);
      for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
      if (f.size() < 3 || f.size() > 5) {
        throw ConfigError(where + "cell needs name,preset,pe_kind[,seed[,objective]]");
      }
      MatrixCell cell;
      cell.name = f[0];
      try {
        cell.preset = parse_preset(f[1]);
        cell.pe_kind = parse_pe_kind(f[2]);
        if (f.size() >= 4 && !f[3].empty()) cell.seed = std::stoull(f[3]);
        if (f.size() == 5) cell.objective = parse_objective(f[4]);
      } catch (const std::logic_error& e) {
        throw ConfigError(where + e.what());
      }
      if (cell.name.empty() || cell.name.find_first_of("/\\,") != std::string::npos) {
        throw ConfigError(where + "cell name must be non-empty without '/', '\\\\' or ','");
      }
      spec.cells.push_back(std::move(cell));
    } else if (key == "stage_window") {
      try {
        spec.stage_window = std::stoul(value);
      } catch (const std::logic_error&) {
        throw ConfigError(where + "bad stage_window");
      }
    } else {
      rest.append(line);
      rest.push_back('\n');
      continue;
    }
    rest.push_back('\n');  // keep line numbers aligned for the config parser
  }
  spec.base = parse_config(rest);
  if (spec.cells.empty()) throw ConfigError("matrix: no cells");
  return spec;
}

TrainConfig cell_config(const TrainConfig& base, const MatrixCell& cell) {
  TrainConfig c = base;
  c.preset = cell.preset;
  c.model.pe_kind = cell.pe_kind;
  if (cell.seed) c.seed = *cell.seed;
  if (cell.objective) c.objective = *cell.objective;
  if (!base.output_dir.empty()) {
    c.output_dir = (std::filesystem::path(base.output_dir) / cell.name).string();
  }
  c.finalize();
  return c;
}

std::vector<MatrixRow> run_experiment_matrix(const MatrixSpec& spec,
                                             const std::function<void(const MatrixRow&)>& on_row) {
  const CorpusShard train_shard = read_shard(spec.base.train_shard);
  std::optional<CorpusShard> valid;
  if (!spec.base.valid_shard.empty()) valid = read_shard(spec.base.valid_shard);
  std::vector<MatrixRow> rows;
  for (const MatrixCell& cell : spec.cells) {
    MatrixRow row;
    row.cell = cell;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const TrainConfig config = cell_config(spec.base, cell);
      const CorpusShard* v = valid ? &*valid : nullptr;
      if (config.model.precision == Precision::k64) {
        row.log = train<double>(config, train_shard, v).log;
      } else {
        row.log = train<float>(config, train_shard, v).log;
      }
      if (!row.log.eval_entries.empty()) {
        row.valid_loss = row.log.eval_entries.back().valid_loss;
        row.valid_ppl = row.log.eval_entries.back().valid_ppl;
      }
      if (!row.log.entries.empty()) row.tail_train_loss = tail_mean_loss(row.log);
      if (row.log.entries.size() >= 2 * spec.stage_window + 1) {
        const auto th = relative_thresholds(row.log, spec.stage_window);
        row.stages = detect_stages(row.log, spec.stage_window, th.plateau, th.dive);
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    row.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string matrix_csv(const std::vector<MatrixRow>& rows) {
  std::string out =
      "name,preset,pe_kind,seed,objective,status,valid_loss,valid_ppl,tail_train_loss,"
      "starting_end,plateau_end,diving_end,plateau_length,wall_clock_s\n";
  for (const auto& r : rows) {
    out += r.cell.name + ',' + std::string(to_string(r.cell.preset)) + ',' +
           std::string(to_string(r.cell.pe_kind)) + ',' +
           (r.cell.seed ? std::to_string(*r.cell.seed) : std::string("base")) + ',' +
           (r.cell.objective ? std::string(to_string(*r.cell.objective)) : std::string("base")) + ',';
    if (!r.ok) {
      out += "failed,,,,,,,," + format_seconds(r.wall_clock_s) + '\n';
      continue;
    }
    out += "ok," + format_double(r.valid_loss) + ',' + format_double(r.valid_ppl) + ',' +
           format_double(r.tail_train_loss) + ',' + std::to_string(r.stages.starting_end) + ',' +
           std::to_string(r.stages.plateau_end) + ',' + std::to_string(r.stages.diving_end) + ',' +
           std::to_string(r.stages.plateau_length) + ',' + format_seconds(r.wall_clock_s) + '\n';
  }
  return out;
}

#define MLMLAB_INSTANTIATE_TRAINER(T)                                                          \
  template TrainResult<T> train<T>(const TrainConfig&, const TrainOptions&);                   \
  template TrainResult<T> train<T>(const TrainConfig&, const CorpusShard&, const CorpusShard*, \
                                   const TrainOptions&);                                       \
  template EvalResult evaluate_ppl<T>(ModelParams<T>&, const TrainConfig&, const CorpusShard&);

MLMLAB_INSTANTIATE_TRAINER(float)
MLMLAB_INSTANTIATE_TRAINER(double)

#undef MLMLAB_INSTANTIATE_TRAINER

}  // namespace mlmlab
