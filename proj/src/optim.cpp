#include "pyramnet/optim.hpp"

#include "pyramnet/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pyramnet {

template <typename Scalar>
void adam_step(Tensor<Scalar>& param, AdamState<Scalar>& state, const std::string& name) {
  const Index n = param.size();
  if (state.m.size() != n) state.m = Array<Scalar>::Zero(n);
  if (state.v.size() != n) state.v = Array<Scalar>::Zero(n);
  state.t += 1;
  if (!param.has_grad()) {
    // No grad recorded: same rule with g = 0.
    state.m *= static_cast<Scalar>(state.beta1);
    state.v *= static_cast<Scalar>(state.beta2);
  } else {
    const Array<Scalar>& g = param.grad();
    if (!g.allFinite()) throw TrainingError("non-finite gradient in parameter '" + name + "'");
    state.m = static_cast<Scalar>(state.beta1) * state.m + static_cast<Scalar>(1 - state.beta1) * g;
    state.v = static_cast<Scalar>(state.beta2) * state.v + static_cast<Scalar>(1 - state.beta2) * g.square();
  }
  const double t = static_cast<double>(state.t);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, t));
  const auto lr = static_cast<Scalar>(state.lr);
  const auto eps = static_cast<Scalar>(state.epsilon);
  param.mutable_value() -= lr * (state.m / c1) / ((state.v / c2).sqrt() + eps);
}

double BnDecaySchedule::at(int epoch) const {
  const double d = 1.0 - (1.0 - initial) * std::pow(rate, static_cast<double>(epoch) / step);
  return std::min(ceiling, d);
}

template void adam_step<float>(Tensor<float>&, AdamState<float>&, const std::string&);
template void adam_step<double>(Tensor<double>&, AdamState<double>&, const std::string&);

}  // namespace pyramnet
