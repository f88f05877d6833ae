#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <numeric>

#include "mlmlab/kernels.hpp"
#include "mlmlab/kernels_reference.hpp"
#include "mlmlab/model.hpp"
#include "mlmlab/ops.hpp"
#include "mlmlab/optim.hpp"
#include "mlmlab/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mlmlab;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

Tensor<double> eye(std::size_t n) {
  Tensor<double> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST(Tensor, RejectsMismatchedValuesAndZeroDims) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), t.numel());
  t.set_requires_grad(false);
  EXPECT_TRUE(t.grad().empty());
}

TEST(Matmul, IdentityTimesMatrix) {
  Tape<double> tape;
  const auto m = random_tensor<double>({3, 3}, 1);
  const NodeId out = ops::matmul(tape, tape.constant(eye(3)), tape.constant(m));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(tape.value(out)[i], m[i]);
}

TEST(Matmul, ZerosAnnihilate) {
  Tape<double> tape;
  const NodeId out = ops::matmul(tape, tape.constant(Tensor<double>({2, 3})),
                                 tape.constant(random_tensor<double>({3, 4}, 2)));
  EXPECT_EQ(tape.value(out).shape(), (Shape{2, 4}));
  for (double v : tape.value(out).values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Tape<float> tape;
  const auto a = random_tensor<float>({4, 5}, 3);
  const auto b = random_tensor<float>({5, 6}, 4);
  const NodeId out = ops::matmul(tape, tape.constant(a), tape.constant(b));
  const auto expect = oracle::matmul(oracle::from_tensor(a), oracle::from_tensor(b));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(tape.value(out).at(i, j), expect[i][j], 1e-6);
  }
}

TEST(Matmul, BatchedWithBroadcastAndTranspose) {
  Tape<double> tape;
  const auto a = random_tensor<double>({3, 2, 4}, 5);
  const auto b = random_tensor<double>({1, 5, 4}, 6);  // used transposed: 4×5
  const NodeId out = ops::matmul(tape, tape.constant(a), tape.constant(b), ops::Trans::kYes);
  ASSERT_EQ(tape.value(out).shape(), (Shape{3, 2, 5}));
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a[(p * 2 + i) * 4 + k] * b[j * 4 + k];
        EXPECT_NEAR(tape.value(out)[(p * 2 + i) * 5 + j], s, 1e-12);
      }
    }
  }
}

TEST(Matmul, ShapeMismatchNamesDimensions) {
  Tape<float> tape;
  try {
    ops::matmul(tape, tape.constant(Tensor<float>({2, 3})), tape.constant(Tensor<float>({4, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
  }
}

TEST(SoftmaxMasked, UniformRow) {
  Tape<double> tape;
  const NodeId out = ops::softmax_masked(tape, tape.constant(Tensor<double>({4, 4})),
                                         AttentionMask::all_allowed(4));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(tape.value(out).at(0, j), 0.25);
}

TEST(SoftmaxMasked, SingleAllowedPositionIsOneHot) {
  Tape<double> tape;
  const NodeId out = ops::softmax_masked(tape, tape.constant(random_tensor<double>({3, 3}, 7)),
                                         build_attention_mask(MaskPolicy::kCausalLeftToRight, 3));
  EXPECT_EQ(tape.value(out).at(0, 0), 1.0);
  EXPECT_EQ(tape.value(out).at(0, 1), 0.0);
  EXPECT_EQ(tape.value(out).at(0, 2), 0.0);
}

TEST(SoftmaxMasked, CausalMatchesEnumeration) {
  Tape<double> tape;
  const auto s = random_tensor<double>({3, 3}, 8);
  const NodeId out = ops::softmax_masked(tape, tape.constant(s),
                                         build_attention_mask(MaskPolicy::kCausalLeftToRight, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> row(3);
    std::vector<bool> allowed(3);
    for (std::size_t j = 0; j < 3; ++j) {
      row[j] = s.at(i, j);
      allowed[j] = j <= i;
    }
    const auto p = oracle::softmax_allowed(row, allowed);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(tape.value(out).at(i, j), p[j], 1e-12);
  }
}

TEST(SoftmaxMasked, RowsSumToOneAndMaskedEntriesAreExactlyZero) {
  for (MaskPolicy policy : {MaskPolicy::kBidirectional, MaskPolicy::kCausalLeftToRight,
                            MaskPolicy::kCausalRightToLeft}) {
    Tape<float> tape;
    const std::size_t n = 9;
    const auto mask = build_attention_mask(policy, n);
    const NodeId out = ops::softmax_masked(tape, tape.constant(random_tensor<float>({5, n, n}, 9, 3.0)), mask);
    const auto& p = tape.value(out);
    for (std::size_t r = 0; r < 5 * n; ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        sum += p[r * n + j];
        if (!mask.allows(r % n, j)) EXPECT_EQ(p[r * n + j], 0.0f);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(SoftmaxMasked, FullyMaskedRowThrows) {
  AttentionMask mask{2, {1, 0, 0, 0}};
  Tape<float> tape;
  EXPECT_THROW(ops::softmax_masked(tape, tape.constant(Tensor<float>({2, 2})), mask), NumericError);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  Tape<double> tape;
  const NodeId out = ops::layer_norm(tape, tape.constant(Tensor<double>::full({1, 4}, 3.5)),
                                     tape.constant(Tensor<double>::full({4}, 1.0)),
                                     tape.constant(Tensor<double>({4})), 1e-5);
  for (double v : tape.value(out).values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowUnchanged) {
  Tape<double> tape;
  const NodeId out = ops::layer_norm(tape, tape.constant(Tensor<double>({1, 2}, {1.0, -1.0})),
                                     tape.constant(Tensor<double>::full({2}, 1.0)),
                                     tape.constant(Tensor<double>({2})), 1e-12);
  EXPECT_NEAR(tape.value(out)[0], 1.0, 1e-9);
  EXPECT_NEAR(tape.value(out)[1], -1.0, 1e-9);
}

TEST(LayerNorm, OutputMomentsAndAffine) {
  Tape<float> tape;
  const auto x = random_tensor<float>({3, 64}, 10, 4.0);
  const NodeId out = ops::layer_norm(tape, tape.constant(x), tape.constant(Tensor<float>::full({64}, 1.0f)),
                                     tape.constant(Tensor<float>({64})), 1e-5f);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 64; ++j) mean += tape.value(out).at(r, j);
    mean /= 64;
    for (std::size_t j = 0; j < 64; ++j) var += std::pow(tape.value(out).at(r, j) - mean, 2);
    var /= 64;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
  const auto g = random_tensor<double>({64}, 11);
  const auto b = random_tensor<double>({64}, 12);
  const auto xd = random_tensor<double>({2, 64}, 13);
  Tape<double> t2;
  const NodeId y = ops::layer_norm(t2, t2.constant(xd), t2.constant(g), t2.constant(b), 1e-5);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> row(xd.values().begin() + r * 64, xd.values().begin() + (r + 1) * 64);
    const auto expect = oracle::layer_norm(row, oracle::vec(g), oracle::vec(b), 1e-5);
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(t2.value(y).at(r, j), expect[j], 1e-12);
  }
}

TEST(Gelu, ZeroAsymptoteAndNormalCdf) {
  Tape<double> tape;
  const NodeId out = ops::gelu(tape, tape.constant(Tensor<double>({3}, {0.0, 10.0, 1.0})));
  EXPECT_EQ(tape.value(out)[0], 0.0);
  EXPECT_NEAR(tape.value(out)[1], 10.0, 1e-6);
  EXPECT_NEAR(tape.value(out)[2], oracle::normal_cdf(1.0), 1e-15);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Tape<double> tape;
  const std::vector<TokenId> targets{3, 0, 6};
  const NodeId loss = ops::cross_entropy(tape, tape.constant(Tensor<double>({3, 7})), targets);
  EXPECT_NEAR(tape.value(loss)[0], std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectTendsToZero) {
  double previous = INFINITY;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    Tensor<double> logits({1, 4});
    logits[2] = margin;
    Tape<double> tape;
    const std::vector<TokenId> targets{2};
    const double loss = tape.value(ops::cross_entropy(tape, tape.constant(logits), targets))[0];
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(CrossEntropy, MatchesLogSumExp) {
  const auto logits = random_tensor<double>({2, 5}, 14);
  const std::vector<TokenId> targets{4, 1};
  Tape<double> tape;
  const double loss = tape.value(ops::cross_entropy(tape, tape.constant(logits), targets))[0];
  const auto m = oracle::from_tensor(logits);
  const double expect = ((oracle::log_sum_exp(m[0]) - m[0][4]) + (oracle::log_sum_exp(m[1]) - m[1][1])) / 2;
  EXPECT_NEAR(loss, expect, 1e-12);
}

TEST(CrossEntropy, IgnoredRowsContributeNothing) {
  auto logits = random_tensor<double>({3, 5}, 15);
  logits.set_requires_grad(true);
  const std::vector<TokenId> targets{kIgnoreIndex, 2, kIgnoreIndex};
  Tape<double> tape;
  const NodeId loss = ops::cross_entropy(tape, tape.parameter(logits), targets);
  const auto m = oracle::from_tensor(logits);
  EXPECT_NEAR(tape.value(loss)[0], oracle::log_sum_exp(m[1]) - m[1][2], 1e-12);
  tape.backward(loss);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(logits.grad()[j], 0.0);
    EXPECT_EQ(logits.grad()[10 + j], 0.0);
  }
}

TEST(CrossEntropy, AllIgnoredOrOutOfRangeThrows) {
  Tape<double> tape;
  const NodeId x = tape.constant(Tensor<double>({2, 3}));
  const std::vector<TokenId> ignored{kIgnoreIndex, kIgnoreIndex};
  const std::vector<TokenId> outside{0, 3};
  EXPECT_THROW(ops::cross_entropy(tape, x, ignored), std::invalid_argument);
  EXPECT_THROW(ops::cross_entropy(tape, x, outside), std::out_of_range);
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor<double>({2, 3}, 16);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(tape, tape.parameter(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ZeroScaledPathGivesZeros) {
  auto x = random_tensor<double>({4}, 17);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(tape, ops::scale(tape, ops::gelu(tape, tape.parameter(x)), 0.0)));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradientsAccumulateAcrossTapes) {
  auto x = random_tensor<double>({3}, 18);
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(ops::sum(tape, tape.parameter(x)));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, ClearedTapeRefusesSecondPass) {
  auto x = random_tensor<double>({3}, 19);
  x.set_requires_grad(true);
  Tape<double> tape;
  const NodeId loss = ops::sum(tape, tape.parameter(x));
  tape.backward(loss);
  EXPECT_TRUE(tape.cleared());
  EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = random_tensor<double>({3}, 20);
  x.set_requires_grad(true);
  Tape<double> tape;
  EXPECT_THROW(tape.backward(tape.parameter(x)), ShapeError);
}

TEST(Backward, NonFiniteValueIsAnError) {
  Tape<double> tape;
  EXPECT_THROW(ops::gelu(tape, tape.constant(Tensor<double>({2}, {1.0, NAN}))), NumericError);
  EXPECT_THROW(ops::scale(tape, tape.constant(Tensor<double>({1}, {1e300})), 1e300), NumericError);
}

TEST(Backward, TopologicalOrder) {
  auto x = random_tensor<double>({2, 2}, 21);
  Tape<double> tape;
  const NodeId a = tape.parameter(x);
  const NodeId b = ops::gelu(tape, a);
  const NodeId c = ops::matmul(tape, b, a);
  const NodeId d = ops::sum(tape, c);
  for (NodeId id : {b, c, d}) {
    for (NodeId in : tape.inputs(id)) EXPECT_LT(in.index, id.index);
  }
}

class OpGradient : public ::testing::Test {
 protected:
  static void expect_ok(const gradcheck::Result& r) {
    EXPECT_GT(r.checked, 0u);
    EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst;
  }
  // Scalar loss sum(gelu(y·w)) with a fixed random column w, so every output
  // element gets a distinct, nonlinear weight.
  static NodeId project(Tape<double>& tape, NodeId y, std::uint64_t seed) {
    const auto& v = tape.value(y);
    NodeId y2 = y;
    if (v.rank() != 2) y2 = ops::merge_heads(tape, y, 1);
    const auto w = random_tensor<double>({tape.value(y2).shape().back(), 1}, seed);
    return ops::sum(tape, ops::gelu(tape, ops::matmul(tape, y2, tape.constant(w))));
  }
};

TEST_F(OpGradient, Matmul) {
  auto a = random_tensor<double>({3, 4}, 30);
  auto b = random_tensor<double>({4, 5}, 31);
  expect_ok(gradcheck::check({&a, &b}, [&](Tape<double>& t) {
    return project(t, ops::matmul(t, t.parameter(a), t.parameter(b)), 32);
  }));
  auto bt = random_tensor<double>({5, 4}, 33);
  expect_ok(gradcheck::check({&a, &bt}, [&](Tape<double>& t) {
    return project(t, ops::matmul(t, t.parameter(a), t.parameter(bt), ops::Trans::kYes), 34);
  }));
}

TEST_F(OpGradient, BatchedMatmulBothBatchedAndBroadcast) {
  auto a = random_tensor<double>({2, 3, 4}, 35);
  auto b = random_tensor<double>({2, 4, 3}, 36);
  auto shared = random_tensor<double>({1, 3, 4}, 37);
  expect_ok(gradcheck::check({&a, &b}, [&](Tape<double>& t) {
    return project(t, ops::merge_heads(t, ops::matmul(t, t.parameter(a), t.parameter(b)), 1), 38);
  }));
  expect_ok(gradcheck::check({&a, &shared}, [&](Tape<double>& t) {
    return project(t, ops::merge_heads(t, ops::matmul(t, t.parameter(a), t.parameter(shared), ops::Trans::kYes), 1), 39);
  }));
}

TEST_F(OpGradient, ElementwiseAndBias) {
  auto x = random_tensor<double>({3, 4}, 40);
  auto y = random_tensor<double>({3, 4}, 41);
  auto bias = random_tensor<double>({4}, 42);
  expect_ok(gradcheck::check({&x, &y, &bias}, [&](Tape<double>& t) {
    NodeId s = ops::add(t, t.parameter(x), t.parameter(y));
    s = ops::add_bias(t, ops::scale(t, s, 0.7), t.parameter(bias));
    return project(t, ops::gelu(t, s), 43);
  }));
}

TEST_F(OpGradient, LayerNorm) {
  auto x = random_tensor<double>({3, 6}, 44);
  auto g = random_tensor<double>({6}, 45);
  auto b = random_tensor<double>({6}, 46);
  expect_ok(gradcheck::check({&x, &g, &b}, [&](Tape<double>& t) {
    return project(t, ops::layer_norm(t, t.parameter(x), t.parameter(g), t.parameter(b), 1e-5), 47);
  }));
}

TEST_F(OpGradient, SoftmaxMaskedEveryPolicy) {
  for (MaskPolicy p : {MaskPolicy::kBidirectional, MaskPolicy::kCausalLeftToRight,
                       MaskPolicy::kCausalRightToLeft}) {
    auto s = random_tensor<double>({2, 4, 4}, 48);
    const auto mask = build_attention_mask(p, 4);
    expect_ok(gradcheck::check({&s}, [&](Tape<double>& t) {
      return project(t, ops::merge_heads(t, ops::softmax_masked(t, t.parameter(s), mask), 1), 49);
    }));
  }
}

TEST_F(OpGradient, EmbeddingPositionsHeadsGatherCrossEntropy) {
  auto table = random_tensor<double>({7, 4}, 50);
  auto pos = random_tensor<double>({3, 4}, 51);
  const std::vector<TokenId> ids{1, 4, 1, 6, 0, 4};
  const std::vector<std::size_t> rows{5, 0, 2};
  const std::vector<TokenId> targets{3, kIgnoreIndex, 6};
  expect_ok(gradcheck::check({&table, &pos}, [&](Tape<double>& t) {
    NodeId h = ops::embedding(t, t.parameter(table), ids);
    h = ops::add_position_rows(t, h, t.parameter(pos), 3);
    h = ops::merge_heads(t, ops::split_heads(t, h, 2, 2), 2);
    NodeId logits = ops::matmul(t, ops::gather_rows(t, h, rows), t.parameter(table), ops::Trans::kYes);
    return ops::cross_entropy(t, logits, targets);
  }));
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Tensor<double> p({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  std::vector<OptimParam<double>> params{{&p, true}};
  auto state = AdamState<double>::zeros_like(params, 0.9, 0.98, 1e-6);
  adam_step<double>(params, state, 1e-2, 0.0);
  EXPECT_EQ(state.step_count, 1u);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  Tensor<double> p({3}, {0.0, 0.0, 0.0});
  p.set_requires_grad(true);
  p.grad()[0] = 0.3;
  p.grad()[1] = -4.0;
  p.grad()[2] = 1e-3;
  std::vector<OptimParam<double>> params{{&p, true}};
  auto state = AdamState<double>::zeros_like(params, 0.9, 0.98, 1e-6);
  adam_step<double>(params, state, 0.01, 0.0);
  const double g[3] = {0.3, -4.0, 1e-3};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], -0.01 * std::abs(g[i]) / (std::abs(g[i]) + 1e-6) * (g[i] > 0 ? 1 : -1), 1e-15);
}

TEST(Adam, ThreeStepScalarTrace) {
  const double b1 = 0.9, b2 = 0.98, eps = 1e-6, lr = 0.05, wd = 0.1;
  const double grads[3] = {0.5, -0.2, 0.8};
  Tensor<double> p({1}, {1.5});
  p.set_requires_grad(true);
  std::vector<OptimParam<double>> params{{&p, true}};
  auto state = AdamState<double>::zeros_like(params, b1, b2, eps);
  double x = 1.5, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    p.grad()[0] = grads[t - 1];
    adam_step<double>(params, state, lr, wd);
    x -= lr * wd * x;
    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p[0], x, 1e-10);
  }
  EXPECT_EQ(state.step_count, 3u);
}

TEST(Adam, ZeroLrIsIdentityAndNoDecayFlagRespected) {
  Tensor<double> p({2}, {1.0, 2.0});
  Tensor<double> q({1}, {3.0});
  p.set_requires_grad(true);
  q.set_requires_grad(true);
  p.grad()[0] = 1;
  q.grad()[0] = 1;
  std::vector<OptimParam<double>> params{{&p, true}, {&q, false}};
  auto state = AdamState<double>::zeros_like(params, 0.9, 0.98, 1e-6);
  adam_step<double>(params, state, 0.0, 0.5);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 2.0);
  q.grad()[0] = 0;
  p.grad()[0] = 0;
  state = AdamState<double>::zeros_like(params, 0.9, 0.98, 1e-6);
  adam_step<double>(params, state, 0.1, 0.5);
  EXPECT_EQ(q[0], 3.0);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 * 1.0, 1e-15);
  EXPECT_THROW(adam_step<double>(params, state, -1.0, 0.0), std::invalid_argument);
}

TEST(ClipGlobalNorm, UnderThresholdUntouched) {
  Tensor<double> p({2}, {0, 0});
  p.set_requires_grad(true);
  p.grad()[0] = 0.3;
  std::vector<OptimParam<double>> params{{&p, true}};
  EXPECT_NEAR(clip_global_norm<double>(params, 0.5), 0.3, 1e-15);
  EXPECT_EQ(p.grad()[0], 0.3);
}

TEST(ClipGlobalNorm, ThreeFourFive) {
  Tensor<double> p({2}, {0, 0});
  p.set_requires_grad(true);
  p.grad()[0] = 3;
  p.grad()[1] = 4;
  std::vector<OptimParam<double>> params{{&p, true}};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(params, 1.0), 5.0);
  EXPECT_NEAR(std::hypot(p.grad()[0], p.grad()[1]), 1.0, 1e-15);
}

TEST(ClipGlobalNorm, RandomBoundedAndIdempotent) {
  auto a = random_tensor<float>({10, 7}, 60, 3.0);
  auto b = random_tensor<float>({13}, 61, 3.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Rng rng(62);
  for (float& g : a.grad()) g = static_cast<float>(rng.normal(0, 2));
  for (float& g : b.grad()) g = static_cast<float>(rng.normal(0, 2));
  std::vector<OptimParam<float>> params{{&a, true}, {&b, false}};
  clip_global_norm<float>(params, 0.7);
  double sq = 0;
  for (float g : a.grad()) sq += double(g) * g;
  for (float g : b.grad()) sq += double(g) * g;
  EXPECT_LE(std::sqrt(sq), 0.7 + 1e-6);
  const std::vector<float> once(a.grad().begin(), a.grad().end());
  clip_global_norm<float>(params, 0.7);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(a.grad()[i], once[i]);
  EXPECT_THROW(clip_global_norm<float>(params, 0.0), std::invalid_argument);
}

TEST(LrSchedule, Endpoints) {
  const LrSchedule s{1e-3, 100, 1000, 1e-5, 1.0};
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 100), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 1000), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(s, 5000), 1e-5);
}

TEST(LrSchedule, MonotoneAndNonNegative) {
  for (double power : {0.5, 1.0, 2.0}) {
    const LrSchedule s{1e-3, 50, 400, 0.0, power};
    for (std::uint64_t t = 1; t <= 400; ++t) {
      EXPECT_GE(lr_at(s, t), 0.0);
      if (t <= 50) EXPECT_GE(lr_at(s, t), lr_at(s, t - 1));
      else EXPECT_LE(lr_at(s, t), lr_at(s, t - 1));
    }
  }
  EXPECT_THROW((LrSchedule{1e-3, 10, 10, 0.0, 1.0}.validate()), ConfigError);
}

TEST(Kernels, ParallelGemmMatchesReference) {
  for (auto [m, n, k] : {std::tuple{37, 53, 29}, {64, 64, 1024}, {5, 259, 64}, {128, 16, 32}}) {
    for (auto ta : {kernels::Trans::kNo, kernels::Trans::kYes}) {
      for (auto tb : {kernels::Trans::kNo, kernels::Trans::kYes}) {
        const auto a = random_tensor<float>({std::size_t(m * k)}, 70);
        const auto b = random_tensor<float>({std::size_t(k * n)}, 71);
        std::vector<float> c1(m * n, 0.5f), c2(m * n, 0.5f);
        kernels::gemm<float>(m, n, k, a.data(), ta, b.data(), tb, c1.data(), true);
        kernels::reference::gemm<float>(m, n, k, a.data(), ta, b.data(), tb, c2.data(), true);
        for (std::size_t i = 0; i < c1.size(); ++i) {
          ASSERT_NEAR(c1[i], c2[i], 1e-4 * std::sqrt(double(k)) * (1 + std::abs(c2[i])));
        }
      }
    }
  }
}

TEST(Kernels, ResultBitsIndependentOfThreadCount) {
  const std::size_t m = 200, n = 96, k = 300, batch = 24;
  const auto a = random_tensor<float>({batch * m * k}, 72);
  const auto b = random_tensor<float>({batch * k * n}, 73);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> c(m * n), cb(batch * m * n);
    kernels::gemm<float>(m, n, k, a.data(), kernels::Trans::kYes, b.data(), kernels::Trans::kNo, c.data(), false);
    kernels::batched_gemm<float>(batch, m, n, k, a.data(), m * k, kernels::Trans::kNo, b.data(), k * n,
                                 kernels::Trans::kYes, cb.data(), false);
    c.insert(c.end(), cb.begin(), cb.end());
    return c;
  };
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(omp_get_num_procs());
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) ASSERT_EQ(one[i], four[i]) << i;
}

TEST(Kernels, SoftmaxLayerNormGeluMatchReference) {
  const std::size_t rows = 300, n = 24;
  const auto s = random_tensor<double>({rows * n}, 74, 3.0);
  const auto mask = build_attention_mask(MaskPolicy::kCausalRightToLeft, n);
  std::vector<double> p1(rows * n), p2(rows * n);
  kernels::softmax_masked<double>(rows, n, s.data(), mask.allowed.data(), p1.data());
  kernels::reference::softmax_masked<double>(rows, n, s.data(), mask.allowed.data(), p2.data());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_NEAR(p1[i], p2[i], 1e-14);

  const auto g = random_tensor<double>({n}, 75);
  const auto bt = random_tensor<double>({n}, 76);
  std::vector<double> y1(rows * n), y2(rows * n), xhat(rows * n), inv(rows);
  kernels::layer_norm_forward<double>(rows, n, s.data(), g.data(), bt.data(), 1e-5, y1.data(),
                                      xhat.data(), inv.data());
  kernels::reference::layer_norm_forward<double>(rows, n, s.data(), g.data(), bt.data(), 1e-5, y2.data());
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-12);

  std::vector<double> z1(rows * n), z2(rows * n);
  kernels::gelu_forward<double>(rows * n, s.data(), z1.data());
  kernels::reference::gelu_forward<double>(rows * n, s.data(), z2.data());
  for (std::size_t i = 0; i < z1.size(); ++i) EXPECT_NEAR(z1[i], z2[i], 1e-15);
}
