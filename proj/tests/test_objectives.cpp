#include <gtest/gtest.h>

#include <cmath>

#include "mlmlab/objectives.hpp"
#include "mlmlab/optim.hpp"

using namespace mlmlab;

namespace {

TokenBlock random_block(std::size_t batch, std::size_t seq, std::uint64_t seed, std::size_t range = 256) {
  Rng rng(seed);
  TokenBlock b{batch, seq, std::vector<TokenId>(batch * seq)};
  for (auto& t : b.tokens) t = static_cast<TokenId>(rng.below(range));
  return b;
}

ModelConfig small(Preset preset, PositionEncodingKind pe = PositionEncodingKind::kLearnable) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ffn = 64;
  c.max_seq_len = 16;
  c.pe_kind = pe;
  return apply_preset(preset, c);
}

template <typename T>
double train_step(ModelParams<T>& p, const ModelConfig& c, const LmBatch& batch, AdamState<T>& adam,
                  double lr) {
  p.zero_grad();
  Tape<T> tape;
  const NodeId loss = batch_loss(tape, p, c, batch);
  const double value = tape.value(loss)[0];
  tape.backward(loss);
  auto params = p.trainable();
  clip_global_norm<T>(params, 1.0);
  adam_step<T>(params, adam, lr, 0.0);
  return value;
}

}  // namespace

TEST(MlmMasking, SelectionRateOverAMillionPositions) {
  const auto block = random_block(1000, 1000, 1);
  MlmSpec spec;
  Rng rng(2);
  const auto b = apply_mlm_masking(block, spec, rng);
  std::size_t selected = 0, masked = 0, random = 0, kept = 0;
  for (std::size_t i = 0; i < b.inputs.size(); ++i) {
    if (b.targets[i] == kIgnoreIndex) {
      ASSERT_EQ(b.inputs[i], block.tokens[i]);
      continue;
    }
    ++selected;
    ASSERT_EQ(b.targets[i], block.tokens[i]);
    if (b.inputs[i] == spec.mask_token_id) ++masked;
    else if (b.inputs[i] == block.tokens[i]) ++kept;
    else ++random;
  }
  EXPECT_NEAR(double(selected) / 1e6, 0.15, 0.005);
  // A random replacement can equal the original (1 in 256), which counts as kept.
  EXPECT_NEAR(double(masked) / selected, 0.8, 0.005);
  EXPECT_NEAR(double(random) / selected, 0.1 * 255 / 256, 0.005);
  EXPECT_NEAR(double(kept) / selected, 0.1 + 0.1 / 256, 0.005);
  EXPECT_EQ(b.target_count(), selected);
}

TEST(MlmMasking, GoldenSixteenTokens) {
  TokenBlock block{1, 16, {}};
  for (char ch : std::string("the quick brown ")) block.tokens.push_back(static_cast<unsigned char>(ch));
  MlmSpec spec;
  spec.mask_rate = 0.5;
  Rng rng(1);
  const auto b = apply_mlm_masking(block, spec, rng);
  const std::vector<TokenId> inputs{257, 257, 101, 257, 113, 117, 257, 99, 257, 257, 98, 257, 257, 257, 257, 257};
  const std::vector<TokenId> targets{116, 104, 101, 32, -100, -100, 105, -100, 107, 32, -100, 114, 111, 119, 110, 32};
  EXPECT_EQ(b.inputs, inputs);
  EXPECT_EQ(b.targets, targets);
}

TEST(MlmMasking, ShapeReservedIdsAndRandomRange) {
  const auto block = random_block(8, 32, 3, 10);
  MlmSpec spec;
  spec.mask_rate = 0.9;
  spec.p_mask_token = 0.0;
  spec.p_random_token = 1.0;
  spec.p_keep = 0.0;
  spec.n_data_tokens = 10;
  Rng rng(4);
  const auto b = apply_mlm_masking(block, spec, rng);
  EXPECT_EQ(b.batch, 8u);
  EXPECT_EQ(b.seq_len, 32u);
  ASSERT_EQ(b.inputs.size(), 256u);
  ASSERT_EQ(b.targets.size(), 256u);
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_NE(b.targets[i], spec.mask_token_id);
    EXPECT_NE(b.targets[i], spec.pad_token_id);
    if (b.targets[i] != kIgnoreIndex) EXPECT_LT(b.inputs[i], 10);
  }
}

TEST(MlmMasking, ZeroSelectionForcesPositionZero) {
  const auto block = random_block(1, 4, 5);
  MlmSpec spec;
  spec.mask_rate = 1e-12;
  Rng rng(6);
  const auto b = apply_mlm_masking(block, spec, rng);
  EXPECT_EQ(b.target_count(), 1u);
  EXPECT_EQ(b.targets[0], block.tokens[0]);
}

TEST(MlmMasking, Errors) {
  MlmSpec spec;
  Rng rng(7);
  EXPECT_THROW(apply_mlm_masking(TokenBlock{0, 0, {}}, spec, rng), std::invalid_argument);
  TokenBlock reserved{1, 2, {1, ByteTokenizer::kMask}};
  EXPECT_THROW(apply_mlm_masking(reserved, spec, rng), std::invalid_argument);
  spec.p_keep = 0.2;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = MlmSpec{};
  spec.mask_rate = 1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(ClmShift, ShiftsEachRow) {
  TokenBlock block{2, 4, {1, 2, 3, 4, 5, 6, 7, 8}};
  const auto b = clm_shift(block);
  EXPECT_EQ(b.seq_len, 3u);
  EXPECT_EQ(b.inputs, (std::vector<TokenId>{1, 2, 3, 5, 6, 7}));
  EXPECT_EQ(b.targets, (std::vector<TokenId>{2, 3, 4, 6, 7, 8}));
  EXPECT_EQ(b.target_count(), 6u);
  EXPECT_EQ(b.objective, Objective::kClm);
  EXPECT_THROW(clm_shift(TokenBlock{2, 1, {1, 2}}), std::invalid_argument);
}

TEST(ClmShift, ConstantSequenceIsLearnedToZero) {
  ModelConfig c = small(Preset::kGptDecoder);
  auto p = ModelParams<float>::init(c, 8);
  const auto batch = clm_shift(TokenBlock{2, 8, std::vector<TokenId>(16, 42)});
  auto adam = AdamState<float>::zeros_like(p.trainable(), 0.9, 0.98, 1e-6);
  double loss = 0;
  for (int step = 0; step < 60; ++step) loss = train_step(p, c, batch, adam, 1e-2);
  EXPECT_LT(loss, 1e-2);
}

TEST(BatchLoss, UniformLogitsGiveLogVocab) {
  ModelConfig c = small(Preset::kBert);
  auto p = ModelParams<double>::init(c, 9);
  std::fill(p.token_embedding.values().begin(), p.token_embedding.values().end(), 0.0);
  MlmSpec spec;
  Rng rng(10);
  const auto batch = apply_mlm_masking(random_block(4, 16, 11), spec, rng);
  Tape<double> tape(false);
  EXPECT_NEAR(tape.value(batch_loss(tape, p, c, batch))[0], std::log(259.0), 1e-12);

  auto fresh = ModelParams<double>::init(c, 12);
  Tape<double> t2(false);
  EXPECT_NEAR(t2.value(batch_loss(t2, fresh, c, batch))[0], std::log(259.0), 0.15);
}

TEST(BatchLoss, AgreesWithBatchNll) {
  ModelConfig c = small(Preset::kDecbertDiff);
  auto p = ModelParams<double>::init(c, 13);
  MlmSpec spec;
  Rng rng(14);
  const auto batch = apply_mlm_masking(random_block(3, 16, 15), spec, rng);
  Tape<double> tape(false);
  const double mean = tape.value(batch_loss(tape, p, c, batch))[0];
  const NllSum s = batch_nll(p, c, batch);
  EXPECT_EQ(s.count, batch.target_count());
  EXPECT_NEAR(s.total / s.count, mean, 1e-12);
}

TEST(BatchLoss, SingleBatchOverfit) {
  ModelConfig c = small(Preset::kBert);
  auto p = ModelParams<float>::init(c, 16);
  MlmSpec spec;
  Rng rng(17);
  const auto batch = apply_mlm_masking(random_block(4, 16, 18), spec, rng);
  auto adam = AdamState<float>::zeros_like(p.trainable(), 0.9, 0.98, 1e-6);
  double loss = 0;
  for (int step = 0; step < 100; ++step) loss = train_step(p, c, batch, adam, 3e-3);
  EXPECT_LT(loss, 0.1);
}

TEST(BatchLoss, EarlyStepsDecreaseOnOverfitSet) {
  std::size_t monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig c = small(Preset::kBert);
    auto p = ModelParams<float>::init(c, seed);
    MlmSpec spec;
    Rng rng(seed + 100);
    const auto batch = apply_mlm_masking(random_block(64, 16, seed + 200), spec, rng);
    auto adam = AdamState<float>::zeros_like(p.trainable(), 0.9, 0.98, 1e-6);
    double previous = INFINITY;
    bool ok = true;
    for (int step = 0; step < 10; ++step) {
      const double loss = train_step(p, c, batch, adam, 1e-3);
      ok = ok && loss < previous;
      previous = loss;
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, 9u);
}

TEST(BatchLoss, IgnoredPositionsCarryNoGradient) {
  ModelConfig c = small(Preset::kDecbertSame);
  auto p = ModelParams<double>::init(c, 19);
  MlmSpec spec;
  Rng rng(20);
  const auto batch = apply_mlm_masking(random_block(2, 16, 21), spec, rng);

  auto grads = [&](bool perturb_ignored) {
    p.zero_grad();
    Tape<double> tape;
    NodeId logits = output_logits(tape, p, encode(tape, p, c, batch.inputs, batch.batch));
    Tensor<double> offset(tape.value(logits).shape());
    if (perturb_ignored) {
      Rng r(22);
      for (std::size_t i = 0; i < batch.targets.size(); ++i) {
        if (batch.targets[i] != kIgnoreIndex) continue;
        for (std::size_t v = 0; v < c.vocab_size; ++v) offset.at(i, v) = r.normal(0, 5);
      }
    }
    logits = ops::add(tape, logits, tape.constant(offset));
    const NodeId loss = ops::cross_entropy(tape, logits, batch.targets);
    const double value = tape.value(loss)[0];
    tape.backward(loss);
    std::vector<double> g{value};
    p.for_each([&](const std::string&, Tensor<double>& t, bool trainable, bool) {
      if (trainable) g.insert(g.end(), t.grad().begin(), t.grad().end());
    });
    return g;
  };
  const auto plain = grads(false);
  const auto perturbed = grads(true);
  ASSERT_EQ(plain.size(), perturbed.size());
  for (std::size_t i = 0; i < plain.size(); ++i) ASSERT_EQ(plain[i], perturbed[i]) << i;

  // The gathered path used in training gives the same loss and gradients.
  p.zero_grad();
  Tape<double> tape;
  const NodeId loss = batch_loss(tape, p, c, batch);
  EXPECT_NEAR(tape.value(loss)[0], plain[0], 1e-12);
  tape.backward(loss);
  std::size_t k = 1;
  p.for_each([&](const std::string&, Tensor<double>& t, bool trainable, bool) {
    if (!trainable) return;
    for (double g : t.grad()) EXPECT_NEAR(g, plain[k++], 1e-12);
  });
}

TEST(BatchLoss, ClmLossIgnoresFutureSubstitution) {
  ModelConfig c = small(Preset::kGptDecoder);
  auto p = ModelParams<float>::init(c, 23);
  const auto block = random_block(1, 16, 24);
  const auto base = clm_shift(block);
  const auto base_logits = model_forward(p, c, base.inputs, 1);
  const auto base_nll = ops::per_row_nll(base_logits, base.targets);
  for (std::size_t t = 0; t + 2 < 16; ++t) {
    TokenBlock changed = block;
    Rng rng(25 + t);
    for (std::size_t j = t + 2; j < 16; ++j) changed.tokens[j] = static_cast<TokenId>(rng.below(256));
    const auto b = clm_shift(changed);
    const auto nll = ops::per_row_nll(model_forward(p, c, b.inputs, 1), b.targets);
    for (std::size_t i = 0; i <= t; ++i) ASSERT_EQ(nll[i], base_nll[i]) << "t=" << t << " i=" << i;
  }
}
