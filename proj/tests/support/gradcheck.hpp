#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mlmlab/tape.hpp"

namespace gradcheck {

// |a − n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Result {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

using LossFn = std::function<mlmlab::NodeId(mlmlab::Tape<double>&)>;

// Analytic gradients of every tensor in `params` against central differences
// with step h. loss_fn builds the scalar loss on the given tape, binding the
// tensors through tape.parameter().
inline Result check(const std::vector<mlmlab::Tensor<double>*>& params, const LossFn& loss_fn,
                    double h = 1e-5, double tolerance = 1e-3) {
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    mlmlab::Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    mlmlab::Tape<double> tape(false);
    return tape.value(loss_fn(tape))[0];
  };
  Result r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = eval();
      (*p)[i] = saved - h;
      const double down = eval();
      (*p)[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(p->grad()[i], numeric);
      ++r.checked;
      r.failed += err >= tolerance;
      r.worst = std::max(r.worst, err);
    }
  }
  return r;
}

}  // namespace gradcheck
