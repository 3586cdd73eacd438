#pragma once

#include "pyramnet/gem.hpp"
#include "pyramnet/ops.hpp"
#include "pyramnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace testing {

using namespace pyramnet;
using T64 = Tensor<double>;

inline T64 random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Array<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return T64(std::move(shape), std::move(v), grad);
}

// Largest relative gap between backward() and central differences of
// sum(f(inputs) * weights) for every entry of every input.
inline double fd_rel_error(const std::function<T64(const std::vector<T64>&)>& f, std::vector<T64> inputs,
                           std::uint64_t seed = 3, double h = 1e-5) {
  std::mt19937_64 rng(seed);
  T64 probe = f(inputs);
  Array<double> w(probe.size());
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Index i = 0; i < w.size(); ++i) w[i] = unit(rng);
  auto objective = [&]() {
    const T64 out = f(inputs);
    return (out.value() * w).sum();
  };
  for (auto& in : inputs) in.zero_grad();
  {
    T64 out = f(inputs);
    T64 weights(out.shape(), w);
    backward(sum(mul(out, weights)));
  }
  double worst = 0.0;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    Array<double> analytic = in.has_grad() ? in.grad() : Array<double>::Zero(in.size());
    Array<double> numeric(in.size());
    for (Index i = 0; i < in.size(); ++i) {
      const double keep = in.value()[i];
      in.mutable_value()[i] = keep + h;
      const double up = objective();
      in.mutable_value()[i] = keep - h;
      const double down = objective();
      in.mutable_value()[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    const double scale = std::max({analytic.abs().maxCoeff(), numeric.abs().maxCoeff(), 1e-8});
    worst = std::max(worst, (analytic - numeric).abs().maxCoeff() / scale);
  }
  return worst;
}

// Brute-force graph embedding of one N x F sample: explicit loops for the
// row means and covariances, exhaustive ranking for the top-k.
struct GemOracle {
  std::vector<double> mu;
  std::vector<std::vector<double>> s;
  std::vector<std::vector<Index>> picks;
  std::vector<std::vector<double>> out;  // N x 2F
};

inline GemOracle gem_oracle(const std::vector<std::vector<double>>& x, Index k) {
  const std::size_t n = x.size(), f = x[0].size();
  GemOracle o;
  o.mu.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) o.mu[i] += x[i][c];
    o.mu[i] /= static_cast<double>(f);
  }
  o.s.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < f; ++c) acc += (x[i][c] - o.mu[i]) * (x[j][c] - o.mu[j]);
      o.s[i][j] = acc / static_cast<double>(f);
    }
  o.picks.resize(n);
  o.out.assign(n, std::vector<double>(2 * f, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> taken(n, false);
    taken[i] = true;
    for (Index r = 0; r < k; ++r) {
      std::size_t best = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (taken[j]) continue;
        if (best == n || o.s[i][j] > o.s[i][best]) best = j;  // strict: earlier index wins ties
      }
      taken[best] = true;
      o.picks[i].push_back(static_cast<Index>(best));
    }
    for (std::size_t c = 0; c < f; ++c) {
      o.out[i][c] = x[i][c];
      double acc = 0.0;
      for (Index j : o.picks[i]) acc += x[static_cast<std::size_t>(j)][c];
      o.out[i][f + c] = acc / static_cast<double>(k);
    }
  }
  return o;
}

inline std::vector<std::vector<double>> rows_of(const T64& x) {
  const auto m = x.matrix();
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) rows[static_cast<std::size_t>(i)].assign(m.row(i).data(), m.row(i).data() + m.cols());
  return rows;
}

inline std::vector<Index> random_permutation(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Rows of x[B, N, ...] reordered along the point axis: out[:, i] = x[:, perm[i]].
template <typename Scalar>
Tensor<Scalar> permute_points(const Tensor<Scalar>& x, const std::vector<Index>& perm) {
  const Index b = x.dim(0), n = x.dim(1), inner = x.size() / (b * n);
  Array<Scalar> v(x.size());
  for (Index s = 0; s < b; ++s)
    for (Index i = 0; i < n; ++i)
      v.segment((s * n + i) * inner, inner) = x.value().segment((s * n + perm[static_cast<std::size_t>(i)]) * inner, inner);
  return Tensor<Scalar>(x.shape(), std::move(v));
}

}  // namespace testing
