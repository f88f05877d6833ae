#include "mlmlab/probes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mlmlab/rng.hpp"

namespace mlmlab {

namespace {

void check_permutation(std::span<const std::size_t> perm, std::size_t n) {
  if (perm.size() != n) {
    throw std::invalid_argument("permutation has " + std::to_string(perm.size()) +
                                " entries for " + std::to_string(n) + " positions");
  }
  std::vector<std::uint8_t> seen(n, 0);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw std::invalid_argument("permutation is not a bijection");
    seen[p] = 1;
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

template <typename T>
double permutation_divergence(ModelParams<T>& params, const ModelConfig& config,
                              std::span<const TokenId> tokens,
                              std::span<const std::size_t> permutation) {
  const std::size_t n = tokens.size();
  check_permutation(permutation, n);
  std::vector<TokenId> permuted(n);
  for (std::size_t i = 0; i < n; ++i) permuted[i] = tokens[permutation[i]];
  const Tensor<T> base = model_forward(params, config, tokens);
  const Tensor<T> moved = model_forward(params, config, permuted);
  const std::size_t v = base.dim(1);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < v; ++c) {
      const double d = std::abs(static_cast<double>(moved.at(i, c)) -
                                static_cast<double>(base.at(permutation[i], c)));
      worst = std::max(worst, d);
    }
  }
  return worst;
}

template <typename T>
ProbeResult equivariance_report(ModelParams<T>& params, const ModelConfig& config,
                                const ProbeOptions& options, const std::string& model_id) {
  if (options.n_trials == 0) throw std::invalid_argument("equivariance_report: n_trials must be >= 1");
  if (options.seq_len < 2) throw std::invalid_argument("equivariance_report: seq_len must be >= 2");
  if (options.n_token_values == 0 || options.n_token_values > config.vocab_size) {
    throw std::invalid_argument("equivariance_report: token range outside the vocabulary");
  }
  ProbeResult r;
  r.model_id = model_id;
  r.probe_kind = options.permutation == PermutationKind::kUniform ? "uniform_permutation"
                                                                  : "adjacent_swap";
  r.trials = options.n_trials;
  r.threshold = options.threshold;
  Rng rng(derive_seed({options.seed, static_cast<std::uint64_t>(SeedStream::kProbe)}));
  double total = 0.0;
  std::vector<TokenId> tokens(options.seq_len);
  std::vector<std::size_t> perm(options.seq_len);
  for (std::size_t trial = 0; trial < options.n_trials; ++trial) {
    for (auto& t : tokens) t = static_cast<TokenId>(rng.below(options.n_token_values));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (options.permutation == PermutationKind::kUniform) {
      rng.shuffle(perm.begin(), perm.end());
    } else {
      // Swap two adjacent positions holding different tokens when possible.
      std::size_t i = rng.below(options.seq_len - 1);
      for (std::size_t k = 0; k < options.seq_len - 1 && tokens[i] == tokens[i + 1]; ++k) {
        i = (i + 1) % (options.seq_len - 1);
      }
      std::swap(perm[i], perm[i + 1]);
    }
    const double d = permutation_divergence(params, config, tokens, perm);
    r.max_divergence = std::max(r.max_divergence, d);
    total += d;
  }
  r.mean_divergence = total / static_cast<double>(options.n_trials);
  r.order_sensitive = r.max_divergence > options.threshold;
  return r;
}

std::string probe_csv(std::span<const ProbeResult> results) {
  std::string out = "model_id,probe_kind,max_divergence,mean_divergence,trials,threshold,verdict\n";
  for (const auto& r : results) {
    out += r.model_id + ',' + r.probe_kind + ',' + format_double(r.max_divergence) + ',' +
           format_double(r.mean_divergence) + ',' + std::to_string(r.trials) + ',' +
           format_double(r.threshold) + ',' + r.verdict() + '\n';
  }
  return out;
}

std::vector<std::uint8_t> receptive_field(const MaskSchedule& schedule, std::size_t n) {
  std::vector<std::uint8_t> reach(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) reach[i * n + i] = 1;
  for (MaskPolicy policy : schedule) {
    const AttentionMask mask = build_attention_mask(policy, n);
    std::vector<std::uint8_t> next(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        if (!mask.allows(i, k)) continue;
        for (std::size_t j = 0; j < n; ++j) next[i * n + j] |= reach[k * n + j];
      }
    }
    reach = std::move(next);
  }
  return reach;
}

std::string CausalFlowReport::summary() const {
  if (vacuous) return "vacuous: every position reaches every other";
  if (passed) return "pass: " + std::to_string(checks) + " unreachable pairs unchanged";
  return "fail: perturbing position " + std::to_string(*first_violation_perturbed) +
         " changed logits at position " + std::to_string(*first_violation_output);
}

template <typename T>
CausalFlowReport causal_flow_check(ModelParams<T>& params, const ModelConfig& config,
                                   std::span<const TokenId> tokens, std::uint64_t seed) {
  const std::size_t n = tokens.size();
  if (n == 0) throw std::invalid_argument("causal_flow_check: empty sequence");
  const auto reach = receptive_field(config.mask_schedule, n);
  CausalFlowReport report;
  report.vacuous = std::all_of(reach.begin(), reach.end(), [](std::uint8_t r) { return r != 0; });
  const Tensor<T> base = model_forward(params, config, tokens);
  const std::size_t v = base.dim(1);
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(SeedStream::kProbe), 1}));
  std::vector<TokenId> changed(tokens.begin(), tokens.end());
  for (std::size_t t = 0; t < n; ++t) {
    TokenId replacement = tokens[t];
    while (replacement == tokens[t]) {
      replacement = static_cast<TokenId>(rng.below(config.vocab_size));
    }
    changed[t] = replacement;
    const Tensor<T> out = model_forward(params, config, changed);
    changed[t] = tokens[t];
    for (std::size_t i = 0; i < n; ++i) {
      bool differs = false;
      for (std::size_t c = 0; c < v && !differs; ++c) differs = out.at(i, c) != base.at(i, c);
      if (reach[i * n + t]) {
        ++report.reachable_pairs;
        report.reachable_changed += differs;
        continue;
      }
      ++report.checks;
      if (differs && report.passed) {
        report.passed = false;
        report.first_violation_perturbed = t;
        report.first_violation_output = i;
      }
    }
  }
  return report;
}

#define MLMLAB_INSTANTIATE_PROBES(T)                                                             \
  template double permutation_divergence<T>(ModelParams<T>&, const ModelConfig&,                 \
                                            std::span<const TokenId>, std::span<const std::size_t>); \
  template ProbeResult equivariance_report<T>(ModelParams<T>&, const ModelConfig&,               \
                                              const ProbeOptions&, const std::string&);          \
  template CausalFlowReport causal_flow_check<T>(ModelParams<T>&, const ModelConfig&,            \
                                                 std::span<const TokenId>, std::uint64_t);

MLMLAB_INSTANTIATE_PROBES(float)
MLMLAB_INSTANTIATE_PROBES(double)

#undef MLMLAB_INSTANTIATE_PROBES

}  // namespace mlmlab
