#pragma once

#include "pyramnet/tensor.hpp"

#include <array>
#include <random>
#include <span>

namespace pyramnet {

/// Per-channel batch normalization parameters and running statistics.
/// `decay` weights the old running value: r <- decay * r + (1 - decay) * batch.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Array<Scalar> running_mean;
  Array<Scalar> running_var;
  Scalar decay = Scalar(0.5);
  Scalar epsilon = Scalar(1e-5);

  explicit BatchNormState(Index channels = 0);
  Index channels() const { return running_mean.size(); }
};

// Elementwise arithmetic on equal shapes.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

/// Concatenates along the last axis; all leading extents must agree.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts);

/// Shared per-point linear map (a 1x1 convolution): x[..., Cin] W[Cin, Cout] + b[Cout].
/// `bias` may be undefined.
template <typename Scalar>
Tensor<Scalar> pointwise_linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// Mean over one axis (global average pooling). With keepdim the axis stays at extent 1.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x, int axis, bool keepdim = true);

/// Max over one axis; defaults to the point axis of a B x N x ... tensor.
/// The axis is removed. Ties route the gradient to the first maximum.
template <typename Scalar>
Tensor<Scalar> max_pool_over_points(const Tensor<Scalar>& x, int axis = 1);

/// Inverted dropout: survivors are scaled by 1 / keep_prob. Identity when not training.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar keep_prob, bool training,
                       std::mt19937_64& rng);

/// Mean over rows of -log softmax(logits)[label]; logits viewed as rows x P.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Normalizes over every leading row of x[..., C]. Training mode updates the
/// running statistics of `state` in place.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, BatchNormState<Scalar>& state, bool training);

struct Stride2d {
  Index rows = 1;
  Index cols = 1;
};

/// Output extent of a same-padded strided axis: ceil(extent / stride).
inline Index same_output_extent(Index extent, Index stride) { return (extent + stride - 1) / stride; }

/// Cross-correlation with zero "same" padding over x[B, H, W, Cin] (or [H, W, Cin])
/// and kernel[kh, kw, Cin, Cout]. `bias` may be undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Stride2d stride);

/// Align-corners bilinear interpolation of x[B, h, w, C] (or [h, w, C]) to H x W.
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index height, Index width);

}  // namespace pyramnet
