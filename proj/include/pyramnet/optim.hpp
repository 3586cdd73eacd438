#pragma once

#include "pyramnet/tensor.hpp"

#include <cstdint>
#include <string>

namespace pyramnet {

/// Adam moments for one parameter tensor.
template <typename Scalar>
struct AdamState {
  Array<Scalar> m;
  Array<Scalar> v;
  std::int64_t t = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of `param` from its accumulated grad. A
/// parameter without a grad is treated as having a zero gradient.
/// Throws TrainingError naming `name` when the gradient is not finite.
template <typename Scalar>
void adam_step(Tensor<Scalar>& param, AdamState<Scalar>& state, const std::string& name);

/// Batch-norm decay schedule: starts at `initial` and approaches `ceiling` as
/// 1 - (1 - initial) * rate^(epoch / step), clipped at `ceiling`.
struct BnDecaySchedule {
  double initial = 0.5;
  double rate = 0.5;
  double step = 20.0;
  double ceiling = 0.999;

  double at(int epoch) const;
};

}  // namespace pyramnet
