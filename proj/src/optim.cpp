#include "mlmlab/optim.hpp"

#include <cmath>
#include <string>

namespace mlmlab {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const OptimParam<T>> params, double beta1,
                                      double beta2, double epsilon) {
  AdamState<T> s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor->shape());
    s.v.emplace_back(p.tensor->shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<const OptimParam<T>> params, AdamState<T>& state, double lr,
               double weight_decay) {
  if (lr < 0.0) throw std::invalid_argument("adam_step: negative learning rate");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T eps = static_cast<T>(state.epsilon);
  const T step = static_cast<T>(lr);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
    std::span<const T> g = p.grad();
    const T decay = params[i].weight_decay ? static_cast<T>(lr * weight_decay) : T{0};
    for (std::size_t j = 0; j < p.numel(); ++j) {
      if (decay != T{0}) p[j] -= decay * p[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      const T m_hat = m[j] * inv_bc1;
      const T v_hat = v[j] * inv_bc2;
      p[j] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
double clip_global_norm(std::span<const OptimParam<T>> params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& p : params) {
      for (T& g : p.tensor->grad()) g *= factor;
    }
  }
  return norm;
}

void LrSchedule::validate() const {
  if (warmup_steps == 0) throw ConfigError("lr schedule: warmup_steps must be positive");
  if (total_steps <= warmup_steps) {
    throw ConfigError("lr schedule: total_steps (" + std::to_string(total_steps) +
                      ") must exceed warmup_steps (" + std::to_string(warmup_steps) + ")");
  }
  if (peak_lr < 0.0 || end_lr < 0.0) throw ConfigError("lr schedule: learning rates must be >= 0");
  if (end_lr > peak_lr) throw ConfigError("lr schedule: end_lr above peak_lr");
  if (power <= 0.0) throw ConfigError("lr schedule: power must be positive");
}

double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (step <= s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step >= s.total_steps) return s.end_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return (s.peak_lr - s.end_lr) * std::pow(1.0 - progress, s.power) + s.end_lr;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<const OptimParam<float>>, AdamState<float>&, double, double);
template void adam_step<double>(std::span<const OptimParam<double>>, AdamState<double>&, double,
                                double);
template double clip_global_norm<float>(std::span<const OptimParam<float>>, double);
template double clip_global_norm<double>(std::span<const OptimParam<double>>, double);

}  // namespace mlmlab
