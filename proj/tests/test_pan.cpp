#include "support.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/pan.hpp"

#include <doctest.h>

using namespace pyramnet;
using testing::T64;

namespace {

// Inference-mode statistics that make batch norm a known affine map.
void set_stats(PanBranch<double>& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Index c = 0; c < b.out_channels(); ++c) {
    b.bn.running_mean[c] = u(rng) - 1.0;
    b.bn.running_var[c] = u(rng);
    b.bn.gamma.mutable_value()[c] = u(rng);
    b.bn.beta.mutable_value()[c] = u(rng) - 1.0;
    b.bias.mutable_value()[c] = u(rng) - 1.0;
  }
}

double bn_relu(const PanBranch<double>& b, Index c, double v) {
  const double y = (v - b.bn.running_mean[c]) / std::sqrt(b.bn.running_var[c] + b.bn.epsilon) *
                       b.bn.gamma.value()[c] + b.bn.beta.value()[c];
  return std::max(0.0, y);
}

}  // namespace

TEST_SUITE("pan") {

TEST_CASE("pyramid config defaults and validation") {
  PyramidConfig cfg;
  CHECK(cfg.kernels == std::array<Index, 4>{1, 3, 5, 7});
  CHECK(cfg.strides == std::array<Index, 4>{1, 2, 4, 8});
  CHECK(cfg.channels == std::array<Index, 4>{8, 8, 8, 8});
  CHECK(cfg.total_channels() == 32);
  cfg.validate();

  PyramidConfig even = cfg;
  even.kernels[1] = 4;
  CHECK_THROWS_AS(even.validate(false), ConfigError);
  PyramidConfig wide = cfg;
  wide.channels[0] = 9;
  CHECK_THROWS_AS(wide.validate(), ConfigError);
  wide.validate(false);
  PyramidConfig still = cfg;
  still.strides[2] = 0;
  CHECK_THROWS_AS(still.validate(false), ConfigError);

  CHECK(PyramidConfig::format(cfg.strides) == "1,2,4,8");
  CHECK(PyramidConfig::parse_list("1,3,5,7") == cfg.kernels);
  CHECK_THROWS_AS(PyramidConfig::parse_list("1,3,5"), ConfigError);
}

TEST_CASE("kernel 1 stride 1 is a per-cell affine map") {
  std::mt19937_64 rng(1);
  PanBranch<double> b(1, 1, 3, rng);
  set_stats(b, rng);
  T64 x = testing::random_tensor({2, 5, 4}, rng, false);
  T64 y = pan_branch(x, b, false);
  REQUIRE(y.shape() == Shape{2, 5, 4, 3});
  for (Index cell = 0; cell < 40; ++cell)
    for (Index c = 0; c < 3; ++c) {
      const double v = x.value()[cell] * b.weight.value()[c] + b.bias.value()[c];
      CHECK(y.value()[cell * 3 + c] == doctest::Approx(bn_relu(b, c, v)));
    }
}

TEST_CASE("constant input gives constant interior") {
  std::mt19937_64 rng(2);
  PanBranch<double> b(3, 1, 2, rng);
  set_stats(b, rng);
  const double k = 0.8;
  T64 y = pan_branch(T64::full({1, 8, 8}, k), b, false);
  for (Index c = 0; c < 2; ++c) {
    double wsum = 0.0;
    for (Index t = 0; t < 9; ++t) wsum += b.weight.value()[t * 2 + c];
    const double expect = bn_relu(b, c, k * wsum + b.bias.value()[c]);
    for (Index i = 1; i < 7; ++i)
      for (Index j = 1; j < 7; ++j) CHECK(y.value()[(i * 8 + j) * 2 + c] == doctest::Approx(expect));
  }
}

TEST_CASE("every branch keeps the grid extent") {
  std::mt19937_64 rng(3);
  T64 x = testing::random_tensor({2, 19, 11}, rng, false);
  for (auto [k, s] : std::vector<std::pair<Index, Index>>{{1, 1}, {3, 2}, {5, 4}, {7, 8}}) {
    PanBranch<double> b(k, s, 5, rng);
    CHECK(pan_branch(x, b, true).shape() == Shape{2, 19, 11, 5});
  }
  PanBranch<double> big(3, 16, 2, rng);
  CHECK_THROWS_AS(pan_branch(x, big, true), ConfigError);
}

TEST_CASE("pan_forward shape chain") {
  std::mt19937_64 rng(4);
  auto branches = make_pan_branches<float>(PyramidConfig{}, rng);
  Tensor<float> x({1, 128, 64});
  std::normal_distribution<float> normal;
  for (Index i = 0; i < x.size(); ++i) x.mutable_value()[i] = normal(rng);
  const auto y = pan_forward(x, branches, false);
  CHECK(y.shape() == Shape{1, 128, 64, 32});
  CHECK(pan_collapse(y).shape() == Shape{1, 128, 1, 32});
  for (Index n : {8, 16, 64}) {
    Tensor<float> xn({2, n, 64});
    CHECK(pan_forward(xn, branches, true).shape() == Shape{2, n, 64, 32});
  }
}

TEST_CASE("all-zero input yields the pushed-through biases everywhere") {
  std::mt19937_64 rng(5);
  auto branches = make_pan_branches<double>(PyramidConfig{}, rng);
  for (auto& b : branches) set_stats(b, rng);
  const T64 y = pan_forward(T64::zeros({1, 16, 12}), branches, false);
  Index offset = 0;
  for (const auto& b : branches) {
    for (Index c = 0; c < b.out_channels(); ++c) {
      const double expect = bn_relu(b, c, b.bias.value()[c]);
      for (Index cell = 0; cell < 16 * 12; ++cell)
        CHECK(y.value()[cell * 32 + offset + c] == doctest::Approx(expect));
    }
    offset += b.out_channels();
  }
}

TEST_CASE("pan_collapse means over the C axis") {
  CHECK((pan_collapse(T64::full({2, 3, 5, 4}, 1.25)).value() == 1.25).all());
  std::mt19937_64 rng(6);
  T64 x = testing::random_tensor({1, 3, 5, 4}, rng, false);
  const T64 y = pan_collapse(x);
  for (Index n = 0; n < 3; ++n)
    for (Index k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (Index c = 0; c < 5; ++c) acc += x.value()[(n * 5 + c) * 4 + k];
      CHECK(y.value()[n * 4 + k] == doctest::Approx(acc / 5.0));
    }
}

TEST_CASE("point order: only the 1x1 branch is equivariant") {
  std::mt19937_64 rng(7);
  PyramidConfig single;
  single.kernels = {1, 1, 1, 1};
  single.strides = {1, 1, 1, 1};
  auto pointwise = make_pan_branches<double>(single, rng);
  auto pyramid = make_pan_branches<double>(PyramidConfig{}, rng);
  for (auto& b : pyramid) set_stats(b, rng);
  T64 x = testing::random_tensor({1, 16, 8}, rng, false);
  const auto perm = testing::random_permutation(16, rng);
  const T64 xp = testing::permute_points(x, perm);

  const T64 a = testing::permute_points(pan_forward(x, pointwise, false), perm);
  CHECK((pan_forward(xp, pointwise, false).value() - a.value()).abs().maxCoeff() < 1e-12);

  const T64 b = testing::permute_points(pan_forward(x, pyramid, false), perm);
  CHECK((pan_forward(xp, pyramid, false).value() - b.value()).abs().maxCoeff() > 1e-6);
}

TEST_CASE("pan gradients on a 6x8 grid") {
  std::mt19937_64 rng(8);
  PyramidConfig cfg;
  cfg.strides = {1, 2, 2, 3};
  cfg.channels = {2, 2, 2, 2};
  auto branches = make_pan_branches<double>(cfg, rng);
  T64 x = testing::random_tensor({2, 6, 8}, rng);
  std::vector<T64> inputs{x};
  for (auto& b : branches) {
    inputs.push_back(b.weight);
    inputs.push_back(b.bias);
  }
  const double err = testing::fd_rel_error(
      [&](const std::vector<T64>& in) { return pan_collapse(pan_forward(in[0], branches, false)); }, inputs);
  CHECK(err < 1e-4);
}

}  // TEST_SUITE
