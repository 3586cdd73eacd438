#pragma once

#include "pyramnet/tensor.hpp"

#include <random>

namespace pyramnet {

/// Normal(0, stddev) samples redrawn until they fall within two standard deviations.
template <typename Scalar>
Tensor<Scalar> truncated_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Array<Scalar> values(numel(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < values.size(); ++i) {
    double z = normal(rng);
    while (z < -2.0 || z > 2.0) z = normal(rng);
    values[i] = static_cast<Scalar>(z * stddev);
  }
  return Tensor<Scalar>(std::move(shape), std::move(values), true);
}

template <typename Scalar>
Tensor<Scalar> zero_parameter(Shape shape) {
  return Tensor<Scalar>(std::move(shape), true);
}

/// splitmix64 finalizer; used to derive independent seeds from (seed, index, epoch) tuples.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

}  // namespace pyramnet
