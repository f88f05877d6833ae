#include "mlmlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mlmlab/rng.hpp"

namespace mlmlab::ops {

namespace {

template <typename T>
Tensor<T> like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

struct MatmulGeometry {
  std::size_t batch, m, n, k;
  bool a_batched, b_batched;
  Shape out_shape;
};

template <typename T>
MatmulGeometry matmul_geometry(const Tensor<T>& a, const Tensor<T>& b, Trans tb) {
  require(a.rank() == 2 || a.rank() == 3, "matmul: lhs must be rank 2 or 3, got " + shape_to_string(a.shape()));
  require(b.rank() == 2 || b.rank() == 3, "matmul: rhs must be rank 2 or 3, got " + shape_to_string(b.shape()));
  const std::size_t ba = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t bb = b.rank() == 3 ? b.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t ka = a.dim(a.rank() - 1);
  const std::size_t kb = tb == Trans::kNo ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  const std::size_t n = tb == Trans::kNo ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  require(ka == kb, "matmul: inner dimensions differ (" + std::to_string(ka) + " vs " +
                        std::to_string(kb) + ") for " + shape_to_string(a.shape()) + " · " +
                        shape_to_string(b.shape()) + (tb == Trans::kYes ? "ᵀ" : ""));
  require(ba == bb || ba == 1 || bb == 1, "matmul: batch dimensions " + std::to_string(ba) +
                                              " and " + std::to_string(bb) + " do not broadcast");
  const std::size_t batch = std::max(ba, bb);
  Shape out = (a.rank() == 2 && b.rank() == 2) ? Shape{m, n} : Shape{batch, m, n};
  return {batch, m, n, ka, ba == batch && batch > 1, bb == batch && batch > 1, out};
}

}  // namespace

template <typename T>
NodeId matmul(Tape<T>& tape, NodeId a, NodeId b, Trans tb) {
  const MatmulGeometry g = matmul_geometry(tape.value(a), tape.value(b), tb);
  Tensor<T> out(g.out_shape);
  const std::size_t sa = g.a_batched ? g.m * g.k : 0;
  const std::size_t sb = g.b_batched ? g.k * g.n : 0;
  if (g.batch == 1) {
    kernels::gemm(g.m, g.n, g.k, tape.value(a).data(), Trans::kNo, tape.value(b).data(), tb,
                  out.data(), false);
  } else {
    kernels::batched_gemm(g.batch, g.m, g.n, g.k, tape.value(a).data(), sa, Trans::kNo,
                          tape.value(b).data(), sb, tb, out.data(), false);
  }
  return tape.record(
      OpKind::kMatMul, std::move(out), {a, b},
      [a, b, g, sa, sb, tb](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
        const T* av = t.value(a).data();
        const T* bv = t.value(b).data();
        const std::size_t sc = g.m * g.n;
        if (t.needs_grad(a)) {
          T* da = t.grad(a).data();
          // dA = dC · op(B)ᵀ
          const Trans tb_back = tb == Trans::kNo ? Trans::kYes : Trans::kNo;
          if (g.batch == 1 || g.a_batched) {
            kernels::batched_gemm(g.batch, g.m, g.k, g.n, dc.data(), sc, Trans::kNo, bv, sb,
                                  tb_back, da, true);
          } else {
            for (std::size_t p = 0; p < g.batch; ++p) {
              kernels::gemm(g.m, g.k, g.n, dc.data() + p * sc, Trans::kNo, bv + p * sb, tb_back,
                            da, true);
            }
          }
        }
        if (t.needs_grad(b)) {
          T* db = t.grad(b).data();
          // dB = op(A)ᵀ · dC, or its transpose when B is stored transposed.
          if (g.b_batched) {
            if (tb == Trans::kNo) {
              kernels::batched_gemm(g.batch, g.k, g.n, g.m, av, sa, Trans::kYes, dc.data(), sc,
                                    Trans::kNo, db, true);
            } else {
              kernels::batched_gemm(g.batch, g.n, g.k, g.m, dc.data(), sc, Trans::kYes, av, sa,
                                    Trans::kNo, db, true);
            }
          } else {
            // Shared B: reduce over the batch in order.
            for (std::size_t p = 0; p < g.batch; ++p) {
              if (tb == Trans::kNo) {
                kernels::gemm(g.k, g.n, g.m, av + p * sa, Trans::kYes, dc.data() + p * sc,
                              Trans::kNo, db, true);
              } else {
                kernels::gemm(g.n, g.k, g.m, dc.data() + p * sc, Trans::kYes, av + p * sa,
                              Trans::kNo, db, true);
              }
            }
          }
        }
      });
}

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require(av.shape() == bv.shape(), "add: shapes " + shape_to_string(av.shape()) + " and " +
                                        shape_to_string(bv.shape()) + " differ");
  Tensor<T> out = like(av);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return tape.record(OpKind::kAdd, std::move(out), {a, b},
                     [a, b](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       for (NodeId in : {a, b}) {
                         if (!t.needs_grad(in)) continue;
                         std::span<T> d = t.grad(in);
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
                       }
                     });
}

template <typename T>
NodeId add_bias(Tape<T>& tape, NodeId x, NodeId bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  const std::size_t d = xv.shape().back();
  require(bv.rank() == 1 && bv.dim(0) == d,
          "add_bias: bias " + shape_to_string(bv.shape()) + " does not match last dim of " +
              shape_to_string(xv.shape()));
  Tensor<T> out = like(xv);
  const std::size_t rows = xv.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] + bv[j];
  }
  return tape.record(OpKind::kAddBias, std::move(out), {x, bias},
                     [x, bias, rows, d](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       if (t.needs_grad(x)) {
                         std::span<T> dx = t.grad(x);
                         for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dc[i];
                       }
                       if (t.needs_grad(bias)) {
                         kernels::column_sum(rows, d, dc.data(), t.grad(bias).data());
                       }
                     });
}

template <typename T>
NodeId add_position_rows(Tape<T>& tape, NodeId x, NodeId table, std::size_t seq_len) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& tv = tape.value(table);
  require(xv.rank() == 2 && tv.rank() == 2 && xv.dim(1) == tv.dim(1),
          "add_position_rows: incompatible " + shape_to_string(xv.shape()) + " and table " +
              shape_to_string(tv.shape()));
  require(seq_len >= 1 && seq_len <= tv.dim(0) && xv.dim(0) % seq_len == 0,
          "add_position_rows: sequence length " + std::to_string(seq_len) +
              " exceeds the table or does not divide the rows");
  const std::size_t rows = xv.dim(0);
  const std::size_t d = xv.dim(1);
  Tensor<T> out = like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % seq_len;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] + tv[pos * d + j];
  }
  return tape.record(
      OpKind::kAddPositionRows, std::move(out), {x, table},
      [x, table, rows, d, seq_len](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
        if (t.needs_grad(x)) {
          std::span<T> dx = t.grad(x);
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dc[i];
        }
        if (t.needs_grad(table)) {
          std::span<T> dt = t.grad(table);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t pos = r % seq_len;
            for (std::size_t j = 0; j < d; ++j) dt[pos * d + j] += dc[r * d + j];
          }
        }
      });
}

template <typename T>
NodeId scale(Tape<T>& tape, NodeId x, T factor) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out = like(xv);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * factor;
  return tape.record(OpKind::kScale, std::move(out), {x},
                     [x, factor](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       std::span<T> dx = t.grad(x);
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dc[i];
                     });
}

template <typename T>
NodeId gelu(Tape<T>& tape, NodeId x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out = like(xv);
  kernels::gelu_forward(xv.numel(), xv.data(), out.data());
  return tape.record(OpKind::kGelu, std::move(out), {x},
                     [x](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       const Tensor<T>& xv2 = t.value(x);
                       kernels::gelu_backward(xv2.numel(), xv2.data(), dc.data(), t.grad(x).data());
                     });
}

template <typename T>
NodeId layer_norm(Tape<T>& tape, NodeId x, NodeId gamma, NodeId beta, T eps) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  const std::size_t d = xv.shape().back();
  require(gv.numel() == d && bv.numel() == d,
          "layer_norm: gamma/beta length must equal last dim " + std::to_string(d));
  const std::size_t rows = xv.numel() / d;
  Tensor<T> out = like(xv);
  std::vector<T> xhat(xv.numel());
  std::vector<T> inv_std(rows);
  kernels::layer_norm_forward(rows, d, xv.data(), gv.data(), bv.data(), eps, out.data(),
                              xhat.data(), inv_std.data());
  return tape.record(
      OpKind::kLayerNorm, std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
        T* dx = t.needs_grad(x) ? t.grad(x).data() : nullptr;
        T* dg = t.needs_grad(gamma) ? t.grad(gamma).data() : nullptr;
        T* db = t.needs_grad(beta) ? t.grad(beta).data() : nullptr;
        kernels::layer_norm_backward(rows, d, dc.data(), xhat.data(), inv_std.data(),
                                     t.value(gamma).data(), dx, dg, db);
      });
}

template <typename T>
NodeId softmax_masked(Tape<T>& tape, NodeId scores, const AttentionMask& mask) {
  const Tensor<T>& sv = tape.value(scores);
  require(sv.rank() == 2 || sv.rank() == 3, "softmax_masked: scores must be rank 2 or 3");
  const std::size_t n = sv.shape().back();
  require(sv.dim(sv.rank() - 2) == n && mask.n == n,
          "softmax_masked: scores " + shape_to_string(sv.shape()) + " do not match " +
              std::to_string(mask.n) + "x" + std::to_string(mask.n) + " mask");
  Tensor<T> out = like(sv);
  const std::size_t rows = sv.numel() / n;
  kernels::softmax_masked(rows, n, sv.data(), mask.allowed.data(), out.data());
  return tape.record(OpKind::kSoftmaxMasked, std::move(out), {scores},
                     [scores, rows, n](Tape<T>& t, const Tensor<T>& p, std::span<const T> dc) {
                       kernels::softmax_backward(rows, n, p.data(), dc.data(),
                                                 t.grad(scores).data());
                     });
}

template <typename T>
NodeId embedding(Tape<T>& tape, NodeId table, std::span<const TokenId> ids) {
  const Tensor<T>& tv = tape.value(table);
  require(tv.rank() == 2, "embedding: table must be rank 2");
  require(!ids.empty(), "embedding: no token ids");
  const std::size_t vocab = tv.dim(0);
  const std::size_t d = tv.dim(1);
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return tape.record(OpKind::kEmbedding, std::move(out), {table},
                     [table, d, saved = std::move(saved)](Tape<T>& t, const Tensor<T>&,
                                                          std::span<const T> dc) {
                       T* dt = t.grad(table).data();
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         T* row = dt + static_cast<std::size_t>(saved[i]) * d;
                         for (std::size_t j = 0; j < d; ++j) row[j] += dc[i * d + j];
                       }
                     });
}

namespace {

// Index map shared by split_heads / merge_heads: element (b, s, h, j) of the
// merged layout ↔ ((b·H + h), s, j) of the split layout.
template <typename T, bool kSplit>
void permute_heads(std::size_t batch, std::size_t seq, std::size_t heads, std::size_t dk,
                   const T* src, T* dst, bool accumulate) {
  const std::size_t d = heads * dk;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < seq; ++s) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t merged = (b * seq + s) * d + h * dk;
        const std::size_t split = ((b * heads + h) * seq + s) * dk;
        const T* from = src + (kSplit ? merged : split);
        T* to = dst + (kSplit ? split : merged);
        for (std::size_t j = 0; j < dk; ++j) to[j] = accumulate ? to[j] + from[j] : from[j];
      }
    }
  }
}

}  // namespace

template <typename T>
NodeId split_heads(Tape<T>& tape, NodeId x, std::size_t batch, std::size_t heads) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 2 && batch >= 1 && heads >= 1 && xv.dim(0) % batch == 0 &&
              xv.dim(1) % heads == 0,
          "split_heads: cannot split " + shape_to_string(xv.shape()) + " into batch " +
              std::to_string(batch) + " heads " + std::to_string(heads));
  const std::size_t seq = xv.dim(0) / batch;
  const std::size_t dk = xv.dim(1) / heads;
  Tensor<T> out(Shape{batch * heads, seq, dk});
  permute_heads<T, true>(batch, seq, heads, dk, xv.data(), out.data(), false);
  return tape.record(OpKind::kSplitHeads, std::move(out), {x},
                     [x, batch, seq, heads, dk](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       permute_heads<T, false>(batch, seq, heads, dk, dc.data(),
                                               t.grad(x).data(), true);
                     });
}

template <typename T>
NodeId merge_heads(Tape<T>& tape, NodeId x, std::size_t batch) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 3 && batch >= 1 && xv.dim(0) % batch == 0,
          "merge_heads: cannot merge " + shape_to_string(xv.shape()) + " with batch " +
              std::to_string(batch));
  const std::size_t heads = xv.dim(0) / batch;
  const std::size_t seq = xv.dim(1);
  const std::size_t dk = xv.dim(2);
  Tensor<T> out(Shape{batch * seq, heads * dk});
  permute_heads<T, false>(batch, seq, heads, dk, xv.data(), out.data(), false);
  return tape.record(OpKind::kMergeHeads, std::move(out), {x},
                     [x, batch, seq, heads, dk](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       permute_heads<T, true>(batch, seq, heads, dk, dc.data(), t.grad(x).data(),
                                              true);
                     });
}

template <typename T>
NodeId dropout(Tape<T>& tape, NodeId x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  const Tensor<T>& xv = tape.value(x);
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(xv.numel());
  for (T& f : factor) f = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out = like(xv);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * factor[i];
  return tape.record(OpKind::kDropout, std::move(out), {x},
                     [x, factor = std::move(factor)](Tape<T>& t, const Tensor<T>&,
                                                     std::span<const T> dc) {
                       std::span<T> dx = t.grad(x);
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor[i] * dc[i];
                     });
}

template <typename T>
NodeId gather_rows(Tape<T>& tape, NodeId x, std::span<const std::size_t> rows) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 2, "gather_rows: input must be rank 2");
  require(!rows.empty(), "gather_rows: no rows selected");
  const std::size_t d = xv.dim(1);
  for (std::size_t r : rows) {
    if (r >= xv.dim(0)) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range");
  }
  Tensor<T> out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return tape.record(OpKind::kGatherRows, std::move(out), {x},
                     [x, d, saved = std::move(saved)](Tape<T>& t, const Tensor<T>&,
                                                      std::span<const T> dc) {
                       T* dx = t.grad(x).data();
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) dx[saved[i] * d + j] += dc[i * d + j];
                       }
                     });
}

namespace {

template <typename T>
std::size_t check_targets(const Tensor<T>& logits, std::span<const TokenId> targets) {
  require(logits.rank() == 2 && logits.dim(0) == targets.size(),
          "cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
              std::to_string(targets.size()) + " targets");
  const std::size_t vocab = logits.dim(1);
  std::size_t counted = 0;
  for (TokenId t : targets) {
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    ++counted;
  }
  return counted;
}

template <typename T>
double row_nll(const T* row, std::size_t vocab, TokenId target) {
  T mx = row[0];
  for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) s += std::exp(static_cast<double>(row[j] - mx));
  return static_cast<double>(mx) + std::log(s) - static_cast<double>(row[target]);
}

}  // namespace

template <typename T>
NodeId cross_entropy(Tape<T>& tape, NodeId logits, std::span<const TokenId> targets) {
  const Tensor<T>& lv = tape.value(logits);
  const std::size_t counted = check_targets(lv, targets);
  if (counted == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  const std::size_t vocab = lv.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == kIgnoreIndex) continue;
    total += row_nll(lv.data() + r * vocab, vocab, targets[r]);
  }
  Tensor<T> out(Shape{1}, {static_cast<T>(total / static_cast<double>(counted))});
  std::vector<TokenId> saved(targets.begin(), targets.end());
  return tape.record(
      OpKind::kCrossEntropy, std::move(out), {logits},
      [logits, vocab, counted, saved = std::move(saved)](Tape<T>& t, const Tensor<T>&,
                                                         std::span<const T> dc) {
        const Tensor<T>& lv2 = t.value(logits);
        T* dl = t.grad(logits).data();
        const T g = dc[0] / static_cast<T>(counted);
        for (std::size_t r = 0; r < saved.size(); ++r) {
          if (saved[r] == kIgnoreIndex) continue;
          const T* row = lv2.data() + r * vocab;
          T* drow = dl + r * vocab;
          T mx = row[0];
          for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
          T s = 0;
          for (std::size_t j = 0; j < vocab; ++j) s += std::exp(row[j] - mx);
          const T inv = T{1} / s;
          for (std::size_t j = 0; j < vocab; ++j) drow[j] += g * std::exp(row[j] - mx) * inv;
          drow[saved[r]] -= g;
        }
      });
}

template <typename T>
NodeId sum(Tape<T>& tape, NodeId x) {
  const Tensor<T>& xv = tape.value(x);
  double total = 0.0;
  for (T v : xv.values()) total += v;
  Tensor<T> out(Shape{1}, {static_cast<T>(total)});
  return tape.record(OpKind::kSum, std::move(out), {x},
                     [x](Tape<T>& t, const Tensor<T>&, std::span<const T> dc) {
                       std::span<T> dx = t.grad(x);
                       for (T& v : dx) v += dc[0];
                     });
}

template <typename T>
std::vector<double> per_row_nll(const Tensor<T>& logits, std::span<const TokenId> targets) {
  check_targets(logits, targets);
  const std::size_t vocab = logits.dim(1);
  std::vector<double> out(targets.size(), 0.0);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] != kIgnoreIndex) out[r] = row_nll(logits.data() + r * vocab, vocab, targets[r]);
  }
  return out;
}

#define MLMLAB_INSTANTIATE_OPS(T)                                                              \
  template NodeId matmul<T>(Tape<T>&, NodeId, NodeId, Trans);                                  \
  template NodeId add<T>(Tape<T>&, NodeId, NodeId);                                            \
  template NodeId add_bias<T>(Tape<T>&, NodeId, NodeId);                                       \
  template NodeId add_position_rows<T>(Tape<T>&, NodeId, NodeId, std::size_t);                 \
  template NodeId scale<T>(Tape<T>&, NodeId, T);                                               \
  template NodeId gelu<T>(Tape<T>&, NodeId);                                                   \
  template NodeId layer_norm<T>(Tape<T>&, NodeId, NodeId, NodeId, T);                          \
  template NodeId softmax_masked<T>(Tape<T>&, NodeId, const AttentionMask&);                   \
  template NodeId embedding<T>(Tape<T>&, NodeId, std::span<const TokenId>);                    \
  template NodeId split_heads<T>(Tape<T>&, NodeId, std::size_t, std::size_t);                  \
  template NodeId merge_heads<T>(Tape<T>&, NodeId, std::size_t);                               \
  template NodeId dropout<T>(Tape<T>&, NodeId, double, std::uint64_t);                         \
  template NodeId gather_rows<T>(Tape<T>&, NodeId, std::span<const std::size_t>);              \
  template NodeId cross_entropy<T>(Tape<T>&, NodeId, std::span<const TokenId>);                \
  template NodeId sum<T>(Tape<T>&, NodeId);                                                    \
  template std::vector<double> per_row_nll<T>(const Tensor<T>&, std::span<const TokenId>);

MLMLAB_INSTANTIATE_OPS(float)
MLMLAB_INSTANTIATE_OPS(double)

#undef MLMLAB_INSTANTIATE_OPS

}  // namespace mlmlab::ops
