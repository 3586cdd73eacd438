#include "pyramnet/gem.hpp"

#include "pyramnet/log.hpp"
#include "pyramnet/ops.hpp"

#include <charconv>

namespace pyramnet {

std::string KRule::to_string() const {
  return kind == Kind::kCeilQuarter ? "ceil_f_over_4" : std::to_string(fixed);
}

KRule KRule::parse(const std::string& text) {
  if (text == "ceil_f_over_4" || text == "auto") return ceil_f_over_4();
  Index k = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, k);
  if (ec != std::errc() || ptr != end || k < 1) {
    throw ConfigError("invalid k rule '" + text + "' (expected ceil_f_over_4 or a positive integer)");
  }
  return fixed_k(k);
}

Index choose_k(Index channels, KRule rule) {
  if (rule.kind == KRule::Kind::kFixed) return rule.fixed;
  if (channels < 1) throw ConfigError("choose_k: channel count must be >= 1");
  return (channels + 3) / 4;
}

Index clamp_k(Index k, Index points) {
  const Index clamped = std::clamp<Index>(k, 1, std::max<Index>(points - 1, 1));
  if (clamped != k) {
    warn_once("GEM k = " + std::to_string(k) + " clamped to " + std::to_string(clamped) + " for " +
              std::to_string(points) + " points");
  }
  return clamped;
}

namespace {

struct PointLayout {
  Index batch = 1;
  Index points = 0;
  Index features = 0;
};

template <typename Scalar>
PointLayout point_layout(const Tensor<Scalar>& x, const char* op) {
  switch (x.rank()) {
    case 2:
      return {1, x.dim(0), x.dim(1)};
    case 3:
      return {x.dim(0), x.dim(1), x.dim(2)};
    case 4:
      if (x.dim(2) == 1) return {x.dim(0), x.dim(1), x.dim(3)};
      break;
    default:
      break;
  }
  throw DimensionError(std::string(op) + ": expected [N,F], [B,N,F] or [B,N,1,F], got " +
                       to_string(x.shape()));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> covariance(const Tensor<Scalar>& x) {
  const PointLayout l = point_layout(x, "covariance");
  if (l.points < 2 || l.features < 1) {
    throw DataError("covariance: need N >= 2 points and F >= 1 features, got " + to_string(x.shape()));
  }
  const Index n = l.points, f = l.features;
  Array<Scalar> out(l.batch * n * n);
  for (Index b = 0; b < l.batch; ++b) {
    ConstMatrixMap<Scalar> xb(x.value().data() + b * n * f, n, f);
    MatrixMap<Scalar>(out.data() + b * n * n, n, n) = covariance_matrix(xb);
  }
  Shape shape = x.rank() == 2 ? Shape{n, n} : Shape{l.batch, n, n};
  return make_op<Scalar>("covariance", std::move(shape), std::move(out), {x}, [l](Node<Scalar>& self) {
    const Index n = l.points, f = l.features;
    auto& xn = *self.parents[0];
    auto& gx = xn.grad_buffer();
    for (Index b = 0; b < l.batch; ++b) {
      ConstMatrixMap<Scalar> xb(xn.value.data() + b * n * f, n, f);
      ConstMatrixMap<Scalar> g(self.grad.data() + b * n * n, n, n);
      const RowMatrix<Scalar> centered = xb.colwise() - xb.rowwise().mean();
      RowMatrix<Scalar> dc = (g + g.transpose()) * centered / static_cast<Scalar>(f);
      const Vector<Scalar> row_mean = dc.rowwise().mean();
      dc.colwise() -= row_mean;
      MatrixMap<Scalar>(gx.data() + b * n * f, n, f) += dc;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> gather_mean(const Tensor<Scalar>& x,
                           const std::vector<AdjacencySimilarityMatrix<Scalar>>& selections) {
  const PointLayout l = point_layout(x, "gather_mean");
  if (static_cast<Index>(selections.size()) != l.batch) {
    throw DimensionError("gather_mean: " + std::to_string(selections.size()) +
                         " selections for batch of " + std::to_string(l.batch));
  }
  const Index n = l.points, f = l.features;
  std::vector<IndexMatrix> indices;
  indices.reserve(selections.size());
  for (const auto& s : selections) {
    if (s.points() != n || s.k() < 1) throw DimensionError("gather_mean: selection does not match input");
    if ((s.indices.array() < 0).any() || (s.indices.array() >= n).any()) {
      throw DimensionError("gather_mean: neighbour index out of range");
    }
    indices.push_back(s.indices);
  }
  Array<Scalar> out = Array<Scalar>::Zero(x.size());
  for (Index b = 0; b < l.batch; ++b) {
    ConstMatrixMap<Scalar> xb(x.value().data() + b * n * f, n, f);
    MatrixMap<Scalar> yb(out.data() + b * n * f, n, f);
    const IndexMatrix& idx = indices[static_cast<std::size_t>(b)];
    const Scalar inv = Scalar(1) / static_cast<Scalar>(idx.cols());
    for (Index i = 0; i < n; ++i) {
      auto row = yb.row(i);
      for (Index j = 0; j < idx.cols(); ++j) row += xb.row(idx(i, j));
      row *= inv;
    }
  }
  return make_op<Scalar>("gather_mean", x.shape(), std::move(out), {x},
                         [l, indices = std::move(indices)](Node<Scalar>& self) {
                           const Index n = l.points, f = l.features;
                           auto& gx = self.parents[0]->grad_buffer();
                           for (Index b = 0; b < l.batch; ++b) {
                             MatrixMap<Scalar> gb(gx.data() + b * n * f, n, f);
                             ConstMatrixMap<Scalar> gy(self.grad.data() + b * n * f, n, f);
                             const IndexMatrix& idx = indices[static_cast<std::size_t>(b)];
                             const Scalar inv = Scalar(1) / static_cast<Scalar>(idx.cols());
                             for (Index i = 0; i < n; ++i) {
                               const auto g = gy.row(i) * inv;
                               for (Index j = 0; j < idx.cols(); ++j) gb.row(idx(i, j)) += g;
                             }
                           }
                         });
}

template <typename Scalar>
GemResult<Scalar> gem_forward(const Tensor<Scalar>& x, const GemOptions& options) {
  const PointLayout l = point_layout(x, "gem_forward");
  if (l.points < 2) {
    throw DataError("gem_forward: need at least 2 points, got " + std::to_string(l.points));
  }
  if (!x.value().allFinite()) throw DataError("gem_forward: non-finite input feature");
  const Index n = l.points, f = l.features;

  GemResult<Scalar> result;
  result.k = clamp_k(choose_k(f, options.k_rule), n);
  Array<Scalar> cov(l.batch * n * n);
  result.selections.reserve(static_cast<std::size_t>(l.batch));
  for (Index b = 0; b < l.batch; ++b) {
    ConstMatrixMap<Scalar> xb(x.value().data() + b * n * f, n, f);
    MatrixMap<Scalar> s(cov.data() + b * n * n, n, n);
    s = covariance_matrix(xb);
    result.selections.push_back(options.correlation
                                    ? top_k_select(correlation_from_covariance(s), result.k)
                                    : top_k_select(s, result.k));
  }
  result.covariance = Tensor<Scalar>({l.batch, n, n}, std::move(cov));

  const Tensor<Scalar> flat = x.rank() == 3 ? x : reshape(x, {l.batch, n, f});
  const Tensor<Scalar> joined = concat<Scalar>({flat, gather_mean(flat, result.selections)});
  Shape shape = x.shape();
  shape.back() = 2 * f;
  result.output = x.rank() == 3 ? joined : reshape(joined, std::move(shape));
  return result;
}

#define PYRAMNET_INSTANTIATE(S)                                                                     \
  template Tensor<S> covariance<S>(const Tensor<S>&);                                               \
  template Tensor<S> gather_mean<S>(const Tensor<S>&, const std::vector<AdjacencySimilarityMatrix<S>>&); \
  template GemResult<S> gem_forward<S>(const Tensor<S>&, const GemOptions&);

PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
