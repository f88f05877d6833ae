#include "mlmlab/train_config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "mlmlab/errors.hpp"

namespace mlmlab {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename U>
U parse_number(std::string_view key, std::string_view value) {
  U out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config: bad value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  auto u64 = [&] { return parse_number<std::uint64_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "objective") c.objective = parse_objective(value);
  else if (key == "preset") c.preset = parse_preset(value);
  else if (key == "n_layers") c.model.n_layers = size();
  else if (key == "d_model") c.model.d_model = size();
  else if (key == "n_heads") c.model.n_heads = size();
  else if (key == "d_ffn") c.model.d_ffn = size();
  else if (key == "vocab_size") c.model.vocab_size = size();
  else if (key == "max_seq_len") c.model.max_seq_len = size();
  else if (key == "mask_schedule") c.model.mask_schedule = parse_schedule(value);
  else if (key == "pe_kind") c.model.pe_kind = parse_pe_kind(value);
  else if (key == "dropout") c.model.dropout = real();
  else if (key == "precision") c.model.precision = parse_precision(value);
  else if (key == "layer_norm_eps") c.model.layer_norm_eps = real();
  else if (key == "seq_len") c.seq_len = size();
  else if (key == "batch_size") c.batch_size = size();
  else if (key == "total_steps") c.total_steps = u64();
  else if (key == "warmup_steps") c.warmup_steps = u64();
  else if (key == "peak_lr") c.peak_lr = real();
  else if (key == "end_lr") c.end_lr = real();
  else if (key == "lr_power") c.lr_power = real();
  else if (key == "weight_decay") c.weight_decay = real();
  else if (key == "adam_beta1") c.adam_beta1 = real();
  else if (key == "adam_beta2") c.adam_beta2 = real();
  else if (key == "adam_epsilon") c.adam_epsilon = real();
  else if (key == "grad_clip") c.grad_clip = real();
  else if (key == "mask_rate") c.mask_rate = real();
  else if (key == "seed") c.seed = u64();
  else if (key == "eval_interval") c.eval_interval = u64();
  else if (key == "checkpoint_interval") c.checkpoint_interval = u64();
  else if (key == "eval_max_batches") c.eval_max_batches = u64();
  else if (key == "train_shard") c.train_shard = std::string(value);
  else if (key == "valid_shard") c.valid_shard = std::string(value);
  else if (key == "output_dir") c.output_dir = std::string(value);
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

void TrainConfig::finalize() {
  if (preset) model = apply_preset(*preset, model);
  validate();
}

void TrainConfig::validate() const {
  model.validate();
  if (preset && apply_preset(*preset, model).mask_schedule != model.mask_schedule) {
    throw ConfigError("config: mask_schedule disagrees with preset " +
                      std::string(to_string(*preset)));
  }
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (objective == Objective::kClm && seq_len < 2) {
    throw ConfigError("config: clm needs seq_len >= 2");
  }
  if (seq_len == 0) throw ConfigError("config: seq_len must be positive");
  if (input_len() > model.max_seq_len) {
    throw ConfigError("config: model input length " + std::to_string(input_len()) +
                      " exceeds max_seq_len " + std::to_string(model.max_seq_len));
  }
  if (total_steps > 0) schedule().validate();
  if (eval_interval > total_steps) throw ConfigError("config: eval_interval exceeds total_steps");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("config: adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0)) throw ConfigError("config: adam_epsilon must be positive");
  if (weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
  if (grad_clip < 0) throw ConfigError("config: grad_clip must be >= 0");
  if (objective == Objective::kMlm) mlm_spec().validate();
}

LrSchedule TrainConfig::schedule() const {
  return LrSchedule{peak_lr, warmup_steps, total_steps, end_lr, lr_power};
}

MlmSpec TrainConfig::mlm_spec() const {
  MlmSpec spec;
  spec.mask_rate = mask_rate;
  return spec;
}

std::size_t TrainConfig::input_len() const {
  return objective == Objective::kClm ? seq_len - 1 : seq_len;
}

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream out;
  auto line = [&](std::string_view k, const std::string& v) { out << k << " = " << v << '\n'; };
  line("objective", std::string(to_string(c.objective)));
  if (c.preset) line("preset", std::string(to_string(*c.preset)));
  line("n_layers", std::to_string(c.model.n_layers));
  line("d_model", std::to_string(c.model.d_model));
  line("n_heads", std::to_string(c.model.n_heads));
  line("d_ffn", std::to_string(c.model.d_ffn));
  line("vocab_size", std::to_string(c.model.vocab_size));
  line("max_seq_len", std::to_string(c.model.max_seq_len));
  line("mask_schedule", schedule_to_string(c.model.mask_schedule));
  line("pe_kind", std::string(to_string(c.model.pe_kind)));
  line("dropout", format_double(c.model.dropout));
  line("precision", std::string(to_string(c.model.precision)));
  line("layer_norm_eps", format_double(c.model.layer_norm_eps));
  line("seq_len", std::to_string(c.seq_len));
  line("batch_size", std::to_string(c.batch_size));
  line("total_steps", std::to_string(c.total_steps));
  line("warmup_steps", std::to_string(c.warmup_steps));
  line("peak_lr", format_double(c.peak_lr));
  line("end_lr", format_double(c.end_lr));
  line("lr_power", format_double(c.lr_power));
  line("weight_decay", format_double(c.weight_decay));
  line("adam_beta1", format_double(c.adam_beta1));
  line("adam_beta2", format_double(c.adam_beta2));
  line("adam_epsilon", format_double(c.adam_epsilon));
  line("grad_clip", format_double(c.grad_clip));
  line("mask_rate", format_double(c.mask_rate));
  line("seed", std::to_string(c.seed));
  line("eval_interval", std::to_string(c.eval_interval));
  line("checkpoint_interval", std::to_string(c.checkpoint_interval));
  line("eval_max_batches", std::to_string(c.eval_max_batches));
  line("train_shard", c.train_shard);
  line("valid_shard", c.valid_shard);
  line("output_dir", c.output_dir);
  return out.str();
}

TrainConfig parse_config(std::string_view text) {
  TrainConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                        std::string(key) + "'");
    }
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  // Without an explicit schedule every layer starts bidirectional; a preset
  // then rewrites it.
  if (!seen.contains("mask_schedule")) {
    config.model.mask_schedule.assign(config.model.n_layers, MaskPolicy::kBidirectional);
  }
  config.finalize();
  return config;
}

TrainConfig load_config(const std::string& path) {
  try {
    return parse_config(detail::read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace mlmlab
