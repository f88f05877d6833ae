#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlmlab/model.hpp"

namespace mlmlab {

// max |forward(P·tokens) − P·forward(tokens)| over all logits, where
// (P·tokens)[i] = tokens[permutation[i]]. Throws std::invalid_argument when
// permutation is not a bijection on the positions.
template <typename T>
double permutation_divergence(ModelParams<T>& params, const ModelConfig& config,
                              std::span<const TokenId> tokens,
                              std::span<const std::size_t> permutation);

// Weight scale for probing untrained models: normal(0, 1/√d_model). The
// training init (0.02) shrinks every logit through the tied head.
inline double probe_weight_stddev(const ModelConfig& config) {
  return 1.0 / std::sqrt(static_cast<double>(config.d_model));
}

enum class PermutationKind : std::uint8_t { kUniform, kAdjacentSwap };

struct ProbeOptions {
  std::size_t n_trials = 200;
  std::uint64_t seed = 0;
  std::size_t seq_len = 16;
  std::size_t n_token_values = 256;  // tokens drawn uniformly from [0, n)
  PermutationKind permutation = PermutationKind::kUniform;
  double threshold = 1e-4;
};

struct ProbeResult {
  std::string model_id;
  std::string probe_kind;
  double max_divergence = 0.0;
  double mean_divergence = 0.0;
  std::size_t trials = 0;
  double threshold = 0.0;
  bool order_sensitive = false;  // max_divergence > threshold

  std::string verdict() const { return order_sensitive ? "order-sensitive" : "equivariant"; }
};

// Throws std::invalid_argument for n_trials == 0.
template <typename T>
ProbeResult equivariance_report(ModelParams<T>& params, const ModelConfig& config,
                                const ProbeOptions& options, const std::string& model_id = "model");

// model_id,probe_kind,max_divergence,mean_divergence,trials,threshold,verdict
std::string probe_csv(std::span<const ProbeResult> results);

// reach[i·n + j]: information at input position j can influence output
// position i, from the boolean product of the per-layer mask matrices.
std::vector<std::uint8_t> receptive_field(const MaskSchedule& schedule, std::size_t n);

struct CausalFlowReport {
  bool passed = true;
  bool vacuous = false;  // every position reaches every other: nothing to check
  std::size_t checks = 0;  // (perturbed position, output position) pairs with no path
  std::optional<std::size_t> first_violation_perturbed;
  std::optional<std::size_t> first_violation_output;
  // Perturbation changed a position the oracle marks reachable; reachability is
  // necessary for a change but not sufficient, so this only counts agreement.
  std::size_t reachable_changed = 0;
  std::size_t reachable_pairs = 0;
  std::string summary() const;
};

// For each position t, replaces tokens[t] and checks that logits at every
// position whose receptive field excludes t are bit-identical.
template <typename T>
CausalFlowReport causal_flow_check(ModelParams<T>& params, const ModelConfig& config,
                                   std::span<const TokenId> tokens, std::uint64_t seed = 0);

}  // namespace mlmlab
