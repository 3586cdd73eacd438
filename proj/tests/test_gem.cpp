#include "support.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/gem.hpp"

#include <doctest.h>

#include <set>

using namespace pyramnet;
using testing::T64;

namespace {

RowMatrix<double> random_matrix(Index n, Index f, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RowMatrix<double> m(n, f);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

TEST_SUITE("gem") {

TEST_CASE("attribute means") {
  CHECK(attribute_means(RowMatrix<double>::Zero(3, 4)).isZero());
  RowMatrix<double> row(2, 3);
  row << 1, 2, 3, 0, 0, 0;
  CHECK(attribute_means(row)[0] == 2.0);

  std::mt19937_64 rng(1);
  const RowMatrix<double> x = random_matrix(5, 8, rng);
  const Vector<double> mu = attribute_means(x);
  for (Index i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (Index f = 0; f < 8; ++f) acc += x(i, f);
    CHECK(std::abs(mu[i] - acc / 8.0) < 1e-6);
  }
  RowMatrix<double> bad = x;
  bad(2, 3) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(attribute_means(bad), DataError);
  CHECK_THROWS_AS(attribute_means(RowMatrix<double>::Zero(1, 4)), DataError);
}

TEST_CASE("covariance with one feature is zero") {
  std::mt19937_64 rng(2);
  CHECK(covariance_matrix(random_matrix(6, 1, rng)).isZero());
}

TEST_CASE("covariance of identical rows is their variance") {
  RowMatrix<double> x(4, 3);
  for (Index i = 0; i < 4; ++i) x.row(i) << 1.0, 4.0, -2.0;
  const double var = (0.0 + 9.0 + 9.0) / 3.0;  // row mean 1
  const RowMatrix<double> s = covariance_matrix(x);
  CHECK((s.array() - var).abs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance hand example against brute force") {
  RowMatrix<double> x(3, 2);
  x << 1, 0, 0, 1, 1, 1;
  const RowMatrix<double> s = covariance_matrix(x);
  const auto oracle = testing::gem_oracle({{1, 0}, {0, 1}, {1, 1}}, 1);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(s(i, j) - oracle.s[std::size_t(i)][std::size_t(j)]) < 1e-6);
  CHECK(s(0, 1) < 0.0);
}

TEST_CASE("covariance is symmetric with non-negative diagonal") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const RowMatrix<double> s = covariance_matrix(random_matrix(2 + trial % 9, 1 + trial % 7, rng));
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(s.diagonal().minCoeff() >= 0.0);
  }
}

TEST_CASE("top-k exhaustive and hand cases") {
  std::mt19937_64 rng(4);
  const RowMatrix<double> s = covariance_matrix(random_matrix(6, 4, rng));
  const auto all = top_k_select(s, 5);
  for (Index i = 0; i < 6; ++i) {
    std::set<Index> got(all.indices.row(i).data(), all.indices.row(i).data() + 5);
    CHECK(got.size() == 5);
    CHECK(got.count(i) == 0);
    for (Index j = 1; j < 5; ++j) CHECK(all.scores(i, j - 1) >= all.scores(i, j));
  }

  RowMatrix<double> hand(3, 3);
  hand << 9, 3, 1, 3, 9, 2, 1, 2, 9;
  const auto one = top_k_select(hand, 1);
  CHECK(one.indices(0, 0) == 1);
  CHECK(one.indices(1, 0) == 0);
  CHECK(one.indices(2, 0) == 1);
}

TEST_CASE("top-k breaks ties toward the smaller column") {
  RowMatrix<double> s = RowMatrix<double>::Zero(8, 8);
  s(0, 4) = 2.0;
  s(0, 7) = 2.0;
  s(0, 0) = 5.0;
  CHECK(top_k_select(s, 1).indices(0, 0) == 4);
  CHECK(top_k_select(s, 2).indices(0, 1) == 7);
}

TEST_CASE("top-k rejects k outside [1, N-1]") {
  const RowMatrix<double> s = RowMatrix<double>::Identity(4, 4);
  CHECK_THROWS_AS(top_k_select(s, 0), ConfigError);
  CHECK_THROWS_AS(top_k_select(s, 4), ConfigError);
}

TEST_CASE("choose_k rule") {
  CHECK(choose_k(32) == 8);
  CHECK(choose_k(544) == 136);
  CHECK(choose_k(4) == 1);
  CHECK(choose_k(5) == 2);
  CHECK(choose_k(1) == 1);
  CHECK(choose_k(544, KRule::fixed_k(20)) == 20);
  CHECK(clamp_k(136, 8) == 7);
  CHECK(clamp_k(3, 8) == 3);
  CHECK(KRule::parse("ceil_f_over_4") == KRule::ceil_f_over_4());
  CHECK(KRule::parse("30") == KRule::fixed_k(30));
  CHECK(KRule::parse(KRule::fixed_k(7).to_string()) == KRule::fixed_k(7));
  CHECK_THROWS_AS(KRule::parse("0"), ConfigError);
  CHECK_THROWS_AS(KRule::parse("many"), ConfigError);
}

TEST_CASE("identical rows embed to themselves") {
  T64 x({1, 5, 1, 3}, Array<double>(15));
  for (Index i = 0; i < 5; ++i) x.mutable_value().segment(i * 3, 3) << 0.5, -1.0, 2.0;
  for (Index k : {1, 2, 4}) {
    const auto r = gem_forward(x, {KRule::fixed_k(k)});
    CHECK(r.output.shape() == Shape{1, 5, 1, 6});
    for (Index i = 0; i < 5; ++i) {
      CHECK((r.output.value().segment(i * 6, 3) == x.value().segment(i * 3, 3)).all());
      CHECK((r.output.value().segment(i * 6 + 3, 3) - x.value().segment(i * 3, 3)).abs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("N=3, F=4 hand input against the oracle") {
  const std::vector<std::vector<double>> rows{{1.0, 2.0, 0.0, -1.0}, {0.5, 0.5, 3.0, 1.0}, {2.0, 3.0, 1.0, 0.0}};
  T64 x = T64::from({3, 4}, {1.0, 2.0, 0.0, -1.0, 0.5, 0.5, 3.0, 1.0, 2.0, 3.0, 1.0, 0.0});
  const auto r = gem_forward(x);
  CHECK(r.k == 1);
  const auto oracle = testing::gem_oracle(rows, 1);
  for (Index i = 0; i < 3; ++i) {
    CHECK(r.selections[0].indices(i, 0) == oracle.picks[std::size_t(i)][0]);
    for (Index c = 0; c < 8; ++c) CHECK(std::abs(r.output.value()[i * 8 + c] - oracle.out[std::size_t(i)][std::size_t(c)]) < 1e-6);
  }
}

TEST_CASE("shape contract 32 -> 64") {
  std::mt19937_64 rng(5);
  const auto r = gem_forward(testing::random_tensor({2, 40, 1, 32}, rng, false));
  CHECK(r.output.shape() == Shape{2, 40, 1, 64});
  CHECK(r.k == 8);
  CHECK(r.covariance.shape() == Shape{2, 40, 40});
}

TEST_CASE("k is clamped for tiny clouds") {
  std::mt19937_64 rng(6);
  const auto r = gem_forward(testing::random_tensor({5, 64}, rng, false));
  CHECK(r.k == 4);
  CHECK_THROWS_AS(gem_forward(testing::random_tensor({1, 8}, rng, false)), DataError);
}

TEST_CASE("covariance is per sample") {
  std::mt19937_64 rng(7);
  T64 a = testing::random_tensor({6, 5}, rng, false);
  T64 b = testing::random_tensor({6, 5}, rng, false);
  T64 both = T64({2, 6, 5}, (Array<double>(60) << a.value(), b.value()).finished());
  const auto r = gem_forward(both);
  const auto ra = gem_forward(a), rb = gem_forward(b);
  CHECK((r.output.value().head(60) - ra.output.value()).abs().maxCoeff() < 1e-12);
  CHECK((r.output.value().tail(60) - rb.output.value()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("permutation equivariance") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 7 + trial % 5;
    T64 x = testing::random_tensor({1, n, 6}, rng, false);
    const auto perm = testing::random_permutation(n, rng);
    const auto r = gem_forward(x);
    const auto rp = gem_forward(testing::permute_points(x, perm));
    const T64 expect = testing::permute_points(r.output, perm);
    CHECK((rp.output.value() - expect.value()).abs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("scaling the input scales S and keeps the selection") {
  std::mt19937_64 rng(9);
  T64 x = testing::random_tensor({9, 5}, rng, false);
  const auto r = gem_forward(x);
  const auto r3 = gem_forward(T64(x.shape(), 3.0 * x.value()));
  CHECK((r3.covariance.value() - 9.0 * r.covariance.value()).abs().maxCoeff() < 1e-9);
  CHECK(r3.selections[0].indices == r.selections[0].indices);
}

TEST_CASE("correlation mode selects by Pearson correlation") {
  RowMatrix<double> s(3, 3);
  s << 4, 1.9, 1, 1.9, 1, 0.5, 1, 0.5, 0.25;
  const RowMatrix<double> c = correlation_from_covariance(s);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(0, 1) == doctest::Approx(1.9 / 2.0));
  CHECK(c(1, 2) == doctest::Approx(1.0));
  std::mt19937_64 rng(10);
  const auto r = gem_forward(testing::random_tensor({8, 6}, rng, false), {{}, true});
  CHECK(r.output.shape() == Shape{8, 12});
}

TEST_CASE("gem gradients with frozen selection") {
  std::mt19937_64 rng(11);
  T64 x = testing::random_tensor({2, 7, 1, 6}, rng);
  CHECK(testing::fd_rel_error([](const std::vector<T64>& in) { return gem_forward(in[0]).output; }, {x}) < 1e-4);
  T64 c = testing::random_tensor({2, 5, 4}, rng);
  CHECK(testing::fd_rel_error([](const std::vector<T64>& in) { return covariance(in[0]); }, {c}) < 1e-4);
}

}  // TEST_SUITE
