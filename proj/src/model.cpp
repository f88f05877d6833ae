#include "mlmlab/model.hpp"

#include <cmath>

#include "mlmlab/rng.hpp"

namespace mlmlab {

std::string_view to_string(MaskPolicy p) {
  switch (p) {
    case MaskPolicy::kBidirectional: return "BI";
    case MaskPolicy::kCausalLeftToRight: return "LR";
    case MaskPolicy::kCausalRightToLeft: return "RL";
  }
  return "?";
}

std::string_view to_string(PositionEncodingKind k) {
  switch (k) {
    case PositionEncodingKind::kAbsent: return "absent";
    case PositionEncodingKind::kLearnable: return "learnable";
    case PositionEncodingKind::kSinusoidal: return "sinusoidal";
  }
  return "?";
}

std::string_view to_string(Precision p) { return p == Precision::k32 ? "32" : "64"; }

std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::kBert: return "bert";
    case Preset::kDecbertSame: return "decbert_same";
    case Preset::kDecbertDiff: return "decbert_diff";
    case Preset::kGptDecoder: return "gpt_decoder";
  }
  return "?";
}

MaskPolicy parse_mask_policy(std::string_view s) {
  if (s == "BI") return MaskPolicy::kBidirectional;
  if (s == "LR") return MaskPolicy::kCausalLeftToRight;
  if (s == "RL") return MaskPolicy::kCausalRightToLeft;
  throw ConfigError("unknown mask policy '" + std::string(s) + "' (expected BI, LR or RL)");
}

PositionEncodingKind parse_pe_kind(std::string_view s) {
  if (s == "absent") return PositionEncodingKind::kAbsent;
  if (s == "learnable") return PositionEncodingKind::kLearnable;
  if (s == "sinusoidal") return PositionEncodingKind::kSinusoidal;
  throw ConfigError("unknown pe_kind '" + std::string(s) +
                    "' (expected absent, learnable or sinusoidal)");
}

Precision parse_precision(std::string_view s) {
  if (s == "32") return Precision::k32;
  if (s == "64") return Precision::k64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected 32 or 64)");
}

Preset parse_preset(std::string_view s) {
  for (Preset p : {Preset::kBert, Preset::kDecbertSame, Preset::kDecbertDiff, Preset::kGptDecoder}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError("unknown preset '" + std::string(s) +
                    "' (expected bert, decbert_same, decbert_diff or gpt_decoder)");
}

std::string schedule_to_string(const MaskSchedule& schedule) {
  std::string out;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (i) out += ',';
    out += to_string(schedule[i]);
  }
  return out;
}

MaskSchedule parse_schedule(std::string_view s) {
  MaskSchedule out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    std::string_view item = s.substr(start, comma == std::string_view::npos ? s.npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    out.push_back(parse_mask_policy(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (n_layers == 0) fail("n_layers must be positive");
  if (d_model == 0 || n_heads == 0 || d_ffn == 0 || vocab_size == 0 || max_seq_len == 0) {
    fail("dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (mask_schedule.size() != n_layers) {
    fail("mask_schedule has " + std::to_string(mask_schedule.size()) + " entries for " +
         std::to_string(n_layers) + " layers");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (pe_kind == PositionEncodingKind::kSinusoidal && d_model % 2 != 0) {
    fail("sinusoidal position encoding needs an even d_model");
  }
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

ModelConfig apply_preset(Preset preset, ModelConfig base) {
  using enum MaskPolicy;
  const std::size_t n = base.n_layers;
  if ((preset == Preset::kDecbertSame || preset == Preset::kDecbertDiff) && n < 2) {
    throw ConfigError("preset " + std::string(to_string(preset)) + " needs at least 2 layers");
  }
  MaskSchedule s(n, kBidirectional);
  switch (preset) {
    case Preset::kBert: break;
    case Preset::kDecbertSame: s[0] = s[1] = kCausalLeftToRight; break;
    case Preset::kDecbertDiff:
      s[0] = kCausalLeftToRight;
      s[1] = kCausalRightToLeft;
      break;
    case Preset::kGptDecoder: std::fill(s.begin(), s.end(), kCausalLeftToRight); break;
  }
  base.mask_schedule = std::move(s);
  return base;
}

AttentionMask build_attention_mask(MaskPolicy policy, std::size_t n) {
  AttentionMask m{n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      bool ok = true;
      if (policy == MaskPolicy::kCausalLeftToRight) ok = j <= i;
      if (policy == MaskPolicy::kCausalRightToLeft) ok = j >= i;
      m.allowed[i * n + j] = ok ? 1 : 0;
    }
  }
  return m;
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t max_seq_len, std::size_t d_model) {
  if (d_model % 2 != 0) throw ConfigError("sinusoidal_pe: d_model must be even");
  Tensor<T> pe(Shape{max_seq_len, d_model});
  for (std::size_t i = 0; i < max_seq_len; ++i) {
    for (std::size_t j = 0; 2 * j < d_model; ++j) {
      const double angle = static_cast<double>(i) /
                           std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(d_model));
      pe.at(i, 2 * j) = static_cast<T>(std::sin(angle));
      pe.at(i, 2 * j + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

namespace {

// Each tensor draws from its own stream keyed by name, so the values of one
// tensor do not depend on which other tensors the config creates.
template <typename T>
Tensor<T> normal_tensor(Shape shape, std::uint64_t seed, std::string_view name, double stddev) {
  std::uint64_t key = 0xcbf29ce484222325ULL;
  for (char c : name) key = (key ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(SeedStream::kInit), key}));
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::uint64_t seed, double stddev) {
  config.validate();
  if (!(stddev > 0.0)) throw ConfigError("init: stddev must be positive");
  const std::size_t d = config.d_model;
  const std::size_t f = config.d_ffn;
  ModelParams p;
  p.token_embedding = normal_tensor<T>({config.vocab_size, d}, seed, "token_embedding", stddev);
  if (config.pe_kind == PositionEncodingKind::kLearnable) {
    p.position_embedding = normal_tensor<T>({config.max_seq_len, d}, seed, "position_embedding", stddev);
  } else if (config.pe_kind == PositionEncodingKind::kSinusoidal) {
    p.position_embedding = sinusoidal_pe<T>(config.max_seq_len, d);
    p.position_embedding_frozen = true;
  }
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams<T> layer;
    const std::string pre = "layers." + std::to_string(l) + ".";
    layer.w_q = normal_tensor<T>({d, d}, seed, pre + "attn.w_q", stddev);
    layer.w_k = normal_tensor<T>({d, d}, seed, pre + "attn.w_k", stddev);
    layer.w_v = normal_tensor<T>({d, d}, seed, pre + "attn.w_v", stddev);
    layer.w_o = normal_tensor<T>({d, d}, seed, pre + "attn.w_o", stddev);
    layer.w_ffn1 = normal_tensor<T>({d, f}, seed, pre + "ffn.w1", stddev);
    layer.w_ffn2 = normal_tensor<T>({f, d}, seed, pre + "ffn.w2", stddev);
    layer.b_q = layer.b_k = layer.b_v = layer.b_o = Tensor<T>(Shape{d});
    layer.b_ffn1 = Tensor<T>(Shape{f});
    layer.b_ffn2 = Tensor<T>(Shape{d});
    layer.ln1_gamma = layer.ln2_gamma = Tensor<T>::full(Shape{d}, T{1});
    layer.ln1_beta = layer.ln2_beta = Tensor<T>(Shape{d});
    p.layers.push_back(std::move(layer));
  }
  p.output_bias = Tensor<T>(Shape{config.vocab_size});
  p.for_each([](const std::string&, Tensor<T>& t, bool trainable, bool) {
    t.set_requires_grad(trainable);
  });
  return p;
}

template <typename T>
void ModelParams<T>::for_each(
    const std::function<void(const std::string&, Tensor<T>&, bool, bool)>& fn) {
  fn("token_embedding", token_embedding, true, true);
  if (position_embedding) {
    fn("position_embedding", *position_embedding, !position_embedding_frozen, true);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerParams<T>& L = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    fn(pre + "attn.w_q", L.w_q, true, true);
    fn(pre + "attn.b_q", L.b_q, true, false);
    fn(pre + "attn.w_k", L.w_k, true, true);
    fn(pre + "attn.b_k", L.b_k, true, false);
    fn(pre + "attn.w_v", L.w_v, true, true);
    fn(pre + "attn.b_v", L.b_v, true, false);
    fn(pre + "attn.w_o", L.w_o, true, true);
    fn(pre + "attn.b_o", L.b_o, true, false);
    fn(pre + "ln1.gamma", L.ln1_gamma, true, false);
    fn(pre + "ln1.beta", L.ln1_beta, true, false);
    fn(pre + "ffn.w1", L.w_ffn1, true, true);
    fn(pre + "ffn.b1", L.b_ffn1, true, false);
    fn(pre + "ffn.w2", L.w_ffn2, true, true);
    fn(pre + "ffn.b2", L.b_ffn2, true, false);
    fn(pre + "ln2.gamma", L.ln2_gamma, true, false);
    fn(pre + "ln2.beta", L.ln2_beta, true, false);
  }
  fn("output_bias", output_bias, true, false);
}

template <typename T>
std::vector<OptimParam<T>> ModelParams<T>::trainable() {
  std::vector<OptimParam<T>> out;
  for_each([&](const std::string&, Tensor<T>& t, bool trainable, bool decay) {
    if (trainable) out.push_back({&t, decay});
  });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
  std::size_t n = 0;
  for_each([&](const std::string&, Tensor<T>& t, bool trainable, bool) {
    if (trainable) n += t.numel();
  });
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for_each([](const std::string&, Tensor<T>& t, bool, bool) { t.zero_grad(); });
}

template <typename T>
NodeId embed_input(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
                   std::span<const TokenId> tokens, std::size_t batch) {
  if (batch == 0 || tokens.empty() || tokens.size() % batch != 0) {
    throw ShapeError("embed_input: " + std::to_string(tokens.size()) +
                     " tokens do not split into " + std::to_string(batch) + " sequences");
  }
  const std::size_t seq = tokens.size() / batch;
  if (seq > config.max_seq_len) {
    throw std::out_of_range("embed_input: sequence length " + std::to_string(seq) +
                            " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  NodeId h = ops::embedding(tape, tape.parameter(params.token_embedding), tokens);
  if (config.pe_kind != PositionEncodingKind::kAbsent) {
    h = ops::add_position_rows(tape, h, tape.parameter(*params.position_embedding), seq);
  }
  return h;
}

namespace {

template <typename T>
NodeId linear(Tape<T>& tape, NodeId x, Tensor<T>& w, Tensor<T>& b) {
  return ops::add_bias(tape, ops::matmul(tape, x, tape.parameter(w)), tape.parameter(b));
}

}  // namespace

template <typename T>
NodeId multi_head_attention(Tape<T>& tape, LayerParams<T>& layer, const ModelConfig& config,
                            NodeId x, std::size_t batch, const AttentionMask& mask) {
  const std::size_t heads = config.n_heads;
  NodeId q = ops::split_heads(tape, linear(tape, x, layer.w_q, layer.b_q), batch, heads);
  NodeId k = ops::split_heads(tape, linear(tape, x, layer.w_k, layer.b_k), batch, heads);
  NodeId v = ops::split_heads(tape, linear(tape, x, layer.w_v, layer.b_v), batch, heads);
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config.d_head())));
  NodeId scores = ops::scale(tape, ops::matmul(tape, q, k, ops::Trans::kYes), inv_sqrt_dk);
  NodeId weights = ops::softmax_masked(tape, scores, mask);
  NodeId heads_out = ops::merge_heads(tape, ops::matmul(tape, weights, v), batch);
  return linear(tape, heads_out, layer.w_o, layer.b_o);
}

template <typename T>
NodeId encoder_layer_forward(Tape<T>& tape, LayerParams<T>& layer, const ModelConfig& config,
                             NodeId x, std::size_t batch, const AttentionMask& mask,
                             const ForwardOptions& options, std::uint64_t layer_index) {
  const double rate = options.training ? config.dropout : 0.0;
  const T eps = static_cast<T>(config.layer_norm_eps);
  NodeId attn = multi_head_attention(tape, layer, config, x, batch, mask);
  attn = ops::dropout(tape, attn, rate, derive_seed({options.dropout_seed, layer_index, 0}));
  NodeId y = ops::layer_norm(tape, ops::add(tape, x, attn), tape.parameter(layer.ln1_gamma),
                             tape.parameter(layer.ln1_beta), eps);
  NodeId f = linear(tape, ops::gelu(tape, linear(tape, y, layer.w_ffn1, layer.b_ffn1)),
                    layer.w_ffn2, layer.b_ffn2);
  f = ops::dropout(tape, f, rate, derive_seed({options.dropout_seed, layer_index, 1}));
  return ops::layer_norm(tape, ops::add(tape, y, f), tape.parameter(layer.ln2_gamma),
                         tape.parameter(layer.ln2_beta), eps);
}

template <typename T>
NodeId encode(Tape<T>& tape, ModelParams<T>& params, const ModelConfig& config,
              std::span<const TokenId> tokens, std::size_t batch, const ForwardOptions& options) {
  NodeId h = embed_input(tape, params, config, tokens, batch);
  const std::size_t seq = tokens.size() / batch;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const AttentionMask mask = build_attention_mask(config.mask_schedule.at(l), seq);
    h = encoder_layer_forward(tape, params.layers.at(l), config, h, batch, mask, options, l);
  }
  return h;
}

template <typename T>
NodeId output_logits(Tape<T>& tape, ModelParams<T>& params, NodeId hidden) {
  NodeId logits = ops::matmul(tape, hidden, tape.parameter(params.token_embedding), ops::Trans::kYes);
  return ops::add_bias(tape, logits, tape.parameter(params.output_bias));
}

template <typename T>
Tensor<T> model_forward(ModelParams<T>& params, const ModelConfig& config,
                        std::span<const TokenId> tokens, std::size_t batch) {
  Tape<T> tape(false);
  NodeId logits = output_logits(tape, params, encode(tape, params, config, tokens, batch));
  return tape.value(logits);
}

#define MLMLAB_INSTANTIATE_MODEL(T)                                                               \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);                                 \
  template struct ModelParams<T>;                                                                 \
  template NodeId embed_input<T>(Tape<T>&, ModelParams<T>&, const ModelConfig&,                   \
                                 std::span<const TokenId>, std::size_t);                          \
  template NodeId multi_head_attention<T>(Tape<T>&, LayerParams<T>&, const ModelConfig&, NodeId,  \
                                          std::size_t, const AttentionMask&);                     \
  template NodeId encoder_layer_forward<T>(Tape<T>&, LayerParams<T>&, const ModelConfig&, NodeId, \
                                           std::size_t, const AttentionMask&,                     \
                                           const ForwardOptions&, std::uint64_t);                 \
  template NodeId encode<T>(Tape<T>&, ModelParams<T>&, const ModelConfig&,                        \
                            std::span<const TokenId>, std::size_t, const ForwardOptions&);        \
  template NodeId output_logits<T>(Tape<T>&, ModelParams<T>&, NodeId);                            \
  template Tensor<T> model_forward<T>(ModelParams<T>&, const ModelConfig&,                        \
                                      std::span<const TokenId>, std::size_t);

MLMLAB_INSTANTIATE_MODEL(float)
MLMLAB_INSTANTIATE_MODEL(double)

#undef MLMLAB_INSTANTIATE_MODEL

}  // namespace mlmlab
