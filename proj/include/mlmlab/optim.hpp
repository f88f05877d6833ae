#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mlmlab/tensor.hpp"

namespace mlmlab {

// A trainable tensor as the optimizer sees it.
template <typename T>
struct OptimParam {
  Tensor<T>* tensor = nullptr;
  bool weight_decay = true;
};

template <typename T>
struct AdamState {
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-6;
  std::vector<Tensor<T>> m;  // first moments, one per parameter
  std::vector<Tensor<T>> v;  // second moments

  // Zero moments shaped like each parameter.
  static AdamState zeros_like(std::span<const OptimParam<T>> params, double beta1, double beta2,
                              double epsilon);
};

// Bias-corrected Adam with decoupled weight decay (p -= lr·wd·p before the
// Adam update, for parameters that opt in). Reads each tensor's grad().
template <typename T>
void adam_step(std::span<const OptimParam<T>> params, AdamState<T>& state, double lr,
               double weight_decay);

// Scales all gradients by max_norm / ‖g‖ when the global L2 norm exceeds
// max_norm. Returns the norm measured before clipping.
template <typename T>
double clip_global_norm(std::span<const OptimParam<T>> params, double max_norm);

// Linear warmup to peak_lr, then polynomial decay to end_lr at total_steps.
struct LrSchedule {
  double peak_lr = 1e-4;
  std::uint64_t warmup_steps = 1;
  std::uint64_t total_steps = 2;
  double end_lr = 0.0;
  double power = 1.0;

  void validate() const;
};

// Steps past total_steps return end_lr.
double lr_at(const LrSchedule& schedule, std::uint64_t step);

}  // namespace mlmlab
