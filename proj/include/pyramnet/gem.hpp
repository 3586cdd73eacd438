#pragma once

// Graph embedding: inter-point covariance, top-k peer selection, and mean
// aggregation of the selected peers concatenated onto the input features.

#include "pyramnet/errors.hpp"
#include "pyramnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace pyramnet {

using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-point top-k peers: indices[i] are the k columns of row i of S (self
/// excluded) with the largest scores, ordered by score then by column.
template <typename Scalar>
struct AdjacencySimilarityMatrix {
  IndexMatrix indices;
  RowMatrix<Scalar> scores;

  Index points() const { return indices.rows(); }
  Index k() const { return indices.cols(); }
};

/// How the neighbour count k is derived from the GEM input width F.
struct KRule {
  enum class Kind { kCeilQuarter, kFixed };
  Kind kind = Kind::kCeilQuarter;
  Index fixed = 0;

  static KRule ceil_f_over_4() { return {}; }
  static KRule fixed_k(Index k) { return {Kind::kFixed, k}; }

  std::string to_string() const;
  // Accepts "ceil_f_over_4" or a positive integer.
  static KRule parse(const std::string& text);
  bool operator==(const KRule&) const = default;
};

/// k for a GEM input with `channels` features: ceil(F / 4) or the fixed override.
Index choose_k(Index channels, KRule rule = {});

/// Clamps k into [1, points - 1], warning once per distinct clamp.
Index clamp_k(Index k, Index points);

/// Row means of an N x F attribute map.
template <typename Derived>
Vector<typename Derived::Scalar> attribute_means(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() < 2 || x.cols() < 1) {
    throw DataError("attribute_means: need N >= 2 and F >= 1, got " + std::to_string(x.rows()) +
                    "x" + std::to_string(x.cols()));
  }
  if (!x.allFinite()) throw DataError("attribute_means: non-finite attribute value");
  return x.rowwise().mean();
}

/// S[i, j] = mean_f (x[i, f] - mu[i]) (x[j, f] - mu[j]).
template <typename Derived>
RowMatrix<typename Derived::Scalar> covariance_matrix(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> mu = attribute_means(x);
  const RowMatrix<Scalar> centered = x.colwise() - mu;
  RowMatrix<Scalar> s = centered * centered.transpose();
  s /= static_cast<Scalar>(x.cols());
  return s;
}

/// Rescales a covariance matrix to Pearson correlation; zero-variance rows correlate as 0.
template <typename Derived>
RowMatrix<typename Derived::Scalar> correlation_from_covariance(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> d = s.diagonal();
  Vector<Scalar> inv(d.size());
  for (Index i = 0; i < d.size(); ++i) inv[i] = d[i] > Scalar(0) ? Scalar(1) / std::sqrt(d[i]) : Scalar(0);
  return inv.asDiagonal() * s * inv.asDiagonal();
}

/// Selects each row's k largest off-diagonal entries; ties go to the smaller column.
template <typename Derived>
AdjacencySimilarityMatrix<typename Derived::Scalar> top_k_select(const Eigen::MatrixBase<Derived>& s,
                                                                 Index k) {
  using Scalar = typename Derived::Scalar;
  const Index n = s.rows();
  if (s.cols() != n) {
    throw DimensionError("top_k_select: expected a square matrix, got " + std::to_string(n) + "x" +
                         std::to_string(s.cols()));
  }
  if (k < 1 || k > n - 1) {
    throw ConfigError("top_k_select: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(n - 1) + "]");
  }
  AdjacencySimilarityMatrix<Scalar> out;
  out.indices.resize(n, k);
  out.scores.resize(n, k);
  std::vector<Index> candidates(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::iota(candidates.begin(), candidates.begin() + i, Index{0});
    std::iota(candidates.begin() + i, candidates.end(), i + 1);
    const auto row = s.row(i);
    std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(),
                      [&row](Index a, Index b) {
                        const Scalar va = row(a), vb = row(b);
                        return va > vb || (va == vb && a < b);
                      });
    for (Index j = 0; j < k; ++j) {
      const Index c = candidates[static_cast<std::size_t>(j)];
      out.indices(i, j) = c;
      out.scores(i, j) = row(c);
    }
  }
  return out;
}

/// Differentiable covariance over the point axis of x[B, N, F] (or [N, F]) giving [B, N, N].
template <typename Scalar>
Tensor<Scalar> covariance(const Tensor<Scalar>& x);

/// out[b, i] = mean over j of x[b, selections[b].indices(i, j)]. Indices are constants.
template <typename Scalar>
Tensor<Scalar> gather_mean(const Tensor<Scalar>& x,
                           const std::vector<AdjacencySimilarityMatrix<Scalar>>& selections);

struct GemOptions {
  KRule k_rule;
  bool correlation = false;  // select by Pearson correlation instead of covariance
};

template <typename Scalar>
struct GemResult {
  Tensor<Scalar> output;      // input layout with the last axis doubled
  Tensor<Scalar> covariance;  // [B, N, N], not part of the graph
  std::vector<AdjacencySimilarityMatrix<Scalar>> selections;
  Index k = 0;
};

/// Graph embedding over x[B, N, 1, F], x[B, N, F] or x[N, F]: covariance ->
/// top-k -> neighbour mean -> concat with the input along the feature axis.
template <typename Scalar>
GemResult<Scalar> gem_forward(const Tensor<Scalar>& x, const GemOptions& options = {});

}  // namespace pyramnet
