#pragma once

// Pyramid attention: four strided convolution branches over the N x C
// point-feature grid, each upsampled back to N x C and fused by concatenation.

#include "pyramnet/ops.hpp"
#include "pyramnet/tensor.hpp"

#include <array>
#include <random>
#include <string>

namespace pyramnet {

struct PyramidConfig {
  static constexpr std::size_t kBranches = 4;
  static constexpr Index kReferenceChannels = 32;

  std::array<Index, kBranches> kernels{1, 3, 5, 7};
  std::array<Index, kBranches> strides{1, 2, 4, 8};
  std::array<Index, kBranches> channels{8, 8, 8, 8};

  Index total_channels() const;
  /// Throws ConfigError for even kernels, strides < 1, empty branches, or (when
  /// `reference_shape` is set) a channel budget other than 32.
  void validate(bool reference_shape = true) const;

  // "1,3,5,7" style lists, used by the model config file.
  static std::string format(const std::array<Index, kBranches>& values);
  static std::array<Index, kBranches> parse_list(const std::string& text);
  bool operator==(const PyramidConfig&) const = default;
};

template <typename Scalar>
struct PanBranch {
  Index kernel = 1;
  Index stride = 1;
  Tensor<Scalar> weight;  // [kernel, kernel, 1, out_channels]
  Tensor<Scalar> bias;    // [out_channels]
  BatchNormState<Scalar> bn;

  PanBranch(Index kernel_size, Index stride_size, Index out_channels, std::mt19937_64& rng,
            double init_std = 0.1);
  Index out_channels() const { return bias.size(); }
};

/// One branch over x[B, N, C] (or [B, N, C, 1]): strided same-padded conv,
/// batch norm, ReLU, then bilinear upsampling back to N x C. Returns [B, N, C, out].
template <typename Scalar>
Tensor<Scalar> pan_branch(const Tensor<Scalar>& x, PanBranch<Scalar>& branch, bool training);

/// All branches concatenated along the channel axis: [B, N, C] -> [B, N, C, sum(out)].
template <typename Scalar>
Tensor<Scalar> pan_forward(const Tensor<Scalar>& x, std::vector<PanBranch<Scalar>>& branches,
                           bool training);

/// Mean over the C axis: [B, N, C, K] -> [B, N, 1, K].
template <typename Scalar>
Tensor<Scalar> pan_collapse(const Tensor<Scalar>& x);

template <typename Scalar>
std::vector<PanBranch<Scalar>> make_pan_branches(const PyramidConfig& config, std::mt19937_64& rng,
                                                 double init_std = 0.1);

}  // namespace pyramnet
