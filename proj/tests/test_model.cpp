#include "support.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/gradcheck.hpp"
#include "pyramnet/model.hpp"

#include <doctest.h>

#include <cmath>

using namespace pyramnet;
using testing::T64;

namespace {

ModelConfig small(Task task, Index n, int classes) {
  ModelConfig cfg = ModelConfig::reference(task);
  cfg.points = n;
  cfg.classes = classes;
  cfg.free_form = true;
  return cfg;
}

template <typename Scalar>
Tensor<Scalar> random_input(Index b, const ModelConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.5);
  Array<Scalar> v(b * cfg.points * cfg.features);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(normal(rng));
  return Tensor<Scalar>({b, cfg.points, cfg.features}, std::move(v));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("reference configs") {
  const auto cls = ModelConfig::reference(Task::kClassification);
  CHECK(cls.points == 1024);
  CHECK(cls.features == 3);
  CHECK(cls.classes == 40);
  CHECK(cls.dropout_keep == 0.65);
  CHECK(cls.mlp_widths == std::vector<Index>{64, 128, 256, 512});
  CHECK(cls.concat_width() == 544);
  CHECK(cls.gem2_width() == 1088);
  const auto part = ModelConfig::reference(Task::kPartSeg);
  CHECK(part.points == 2048);
  CHECK(part.classes == 50);
  const auto scene = ModelConfig::reference(Task::kSceneSeg);
  CHECK(scene.points == 4096);
  CHECK(scene.features == 9);
  CHECK(scene.classes == 13);
  for (const auto& c : {cls, part, scene}) c.validate();
}

TEST_CASE("non-reference settings need free-form mode") {
  auto cfg = ModelConfig::reference(Task::kClassification);
  cfg.points = 256;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.free_form = true;
  cfg.validate();

  auto scene = ModelConfig::reference(Task::kSceneSeg);
  scene.classes = 4;
  CHECK_THROWS_AS(scene.validate(), ConfigError);
  auto cls = ModelConfig::reference(Task::kClassification);
  cls.classes = 4;  // synthetic P is accepted
  cls.validate();
  cls.k_rule = KRule::fixed_k(1024);
  CHECK_THROWS_AS(cls.validate(), ConfigError);
}

TEST_CASE("config text round trip") {
  auto cfg = ModelConfig::reference(Task::kPartSeg);
  cfg.k_rule = KRule::fixed_k(20);
  cfg.enable_pan = false;
  cfg.gem_correlation = true;
  cfg.dropout_keep = 0.7;
  cfg.seed = 123456789012345ULL;
  cfg.pyramid.strides = {1, 3, 5, 9};
  const auto back = ModelConfig::parse(cfg.serialize());
  CHECK(back == cfg);
  CHECK_THROWS_AS(ModelConfig::parse("task=classification\nbogus=1\n"), ConfigError);
}

TEST_CASE("trace shapes at reduced N") {
  std::mt19937_64 rng(1);
  auto cfg = small(Task::kClassification, 64, 40);
  PyramNet<float> net(cfg);
  const auto trace = net.forward(random_input<float>(2, cfg, rng), false, rng);
  CHECK(trace.at("input").shape() == Shape{2, 64, 3});
  CHECK(trace.at("post-mlp1").shape() == Shape{2, 64, 1, 32});
  CHECK(trace.at("post-gem1").shape() == Shape{2, 64, 1, 64});
  CHECK(trace.at("splice").shape() == Shape{2, 64, 64});
  CHECK(trace.at("mlp-top").shape() == Shape{2, 64, 1, 512});
  CHECK(trace.at("pan-out").shape() == Shape{2, 64, 64, 32});
  CHECK(trace.at("pan-gap").shape() == Shape{2, 64, 1, 32});
  CHECK(trace.at("concat").shape() == Shape{2, 64, 1, 544});
  CHECK(trace.at("post-gem2").shape() == Shape{2, 64, 1, 1088});
  CHECK(trace.at("logits").shape() == Shape{2, 40});
  CHECK(trace.shape_report().find("concat\t2x64x1x544") != std::string::npos);
  CHECK_THROWS_AS(trace.at("nowhere"), InternalError);
}

TEST_CASE("baseline trace has no covariance or pyramid stages") {
  std::mt19937_64 rng(2);
  auto cfg = small(Task::kClassification, 32, 4);
  cfg.enable_gem = false;
  cfg.enable_pan = false;
  PyramNet<float> net(cfg);
  const auto trace = net.forward(random_input<float>(2, cfg, rng), false, rng);
  for (const auto& [stage, tensor] : trace.stages()) {
    CHECK(stage.find("covariance") == std::string::npos);
    CHECK(stage.find("pan-") == std::string::npos);
  }
  CHECK(trace.at("concat").shape() == Shape{2, 32, 1, 512});
  CHECK(trace.at("post-gem2").shape() == Shape{2, 32, 1, 512});
}

TEST_CASE("segmentation heads give per-point logits") {
  std::mt19937_64 rng(3);
  auto part = small(Task::kPartSeg, 32, 50);
  PyramNet<float> pnet(part);
  CHECK(pnet.logits(random_input<float>(2, part, rng), false, rng).shape() == Shape{2, 32, 50});
  auto scene = small(Task::kSceneSeg, 32, 13);
  scene.features = 9;
  PyramNet<float> snet(scene);
  CHECK(snet.logits(random_input<float>(1, scene, rng), true, rng).shape() == Shape{1, 32, 13});
}

TEST_CASE("input of the wrong size is rejected") {
  std::mt19937_64 rng(4);
  auto cfg = small(Task::kClassification, 32, 4);
  PyramNet<float> net(cfg);
  CHECK_THROWS_AS(net.forward(Tensor<float>({1, 31, 3}), false, rng), DimensionError);
  CHECK_THROWS_AS(net.forward(Tensor<float>({1, 32, 4}), false, rng), DimensionError);
}

TEST_CASE("parameter count ordering across ablations") {
  auto count = [](bool gem, bool pan) {
    auto cfg = small(Task::kClassification, 64, 40);
    cfg.enable_gem = gem;
    cfg.enable_pan = pan;
    return PyramNet<float>(cfg).parameter_count();
  };
  const Index base = count(false, false), with_pan = count(false, true), with_gem = count(true, false),
              full = count(true, true);
  CHECK(base < with_pan);
  CHECK(base < with_gem);
  CHECK(with_pan < full);
  CHECK(with_gem < full);
}

TEST_CASE("construction is deterministic per seed") {
  auto cfg = small(Task::kClassification, 16, 4);
  PyramNet<float> a(cfg), b(cfg);
  cfg.seed = 1;
  PyramNet<float> c(cfg);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK((pa[i].tensor.value() == pb[i].tensor.value()).all());
    differs = differs || (pa[i].tensor.value() != pc[i].tensor.value()).any();
  }
  CHECK(differs);
}

TEST_CASE("inference is repeatable and dropout only acts in training") {
  std::mt19937_64 rng(5);
  auto cfg = small(Task::kClassification, 32, 4);
  PyramNet<double> net(cfg);
  const auto x = random_input<double>(4, cfg, rng);
  std::mt19937_64 r1(1), r2(2);
  CHECK((net.logits(x, false, r1).value() == net.logits(x, false, r2).value()).all());
  std::mt19937_64 t1(1), t2(2);
  CHECK((net.logits(x, true, t1).value() != net.logits(x, true, t2).value()).any());
}

TEST_CASE("classification logits ignore point order without PAN") {
  std::mt19937_64 rng(6);
  auto cfg = small(Task::kClassification, 24, 5);
  cfg.enable_pan = false;
  PyramNet<double> net(cfg);
  const auto x = random_input<double>(2, cfg, rng);
  const auto base = net.logits(x, false, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = net.logits(testing::permute_points(x, testing::random_permutation(24, rng)), false, rng);
    CHECK((p.value() - base.value()).abs().maxCoeff() <= 1e-9);
    CHECK(argmax_labels(p) == argmax_labels(base));
  }
}

TEST_CASE("B=2, N=16 backward reaches every parameter") {
  std::mt19937_64 rng(7);
  auto cfg = small(Task::kClassification, 16, 4);
  PyramNet<double> net(cfg);
  const auto x = random_input<double>(2, cfg, rng);
  std::vector<int> labels{1, 3};
  backward(cross_entropy_loss(net.logits(x, true, rng), labels, Task::kClassification));
  for (auto& p : net.parameters()) {
    INFO(p.name);
    CHECK(p.tensor.has_grad());
    CHECK(p.tensor.grad().allFinite());
  }
  // spot-check a few logit weights against central differences
  auto params = net.parameters();
  auto& w = params[params.size() - 2].tensor;
  REQUIRE(params[params.size() - 2].name == "logits.weight");
  for (Index i : {Index{0}, Index{7}, w.size() - 1}) {
    const double keep = w.value()[i], h = 1e-6;
    auto loss_at = [&](double v) {
      w.mutable_value()[i] = v;
      std::mt19937_64 same(99);
      NoGradGuard guard;
      return cross_entropy_loss(net.logits(x, false, same), labels, Task::kClassification).item();
    };
    const double numeric = (loss_at(keep + h) - loss_at(keep - h)) / (2 * h);
    w.mutable_value()[i] = keep;
    net.zero_grad();
    std::mt19937_64 same(99);
    backward(cross_entropy_loss(net.logits(x, false, same), labels, Task::kClassification));
    CHECK(w.grad()[i] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("end-to-end gradient check on the tiny model") {
  auto suite = GradCheckSuite::standard(true);
  GradCheckSuite model_only;
  for (const auto& c : suite.cases())
    if (c.end_to_end) model_only.add(c);
  REQUIRE(model_only.cases().size() >= 2);
  const auto report = model_only.run();
  for (const auto& row : report.rows) {
    INFO(row.name << " " << row.detail);
    CHECK(row.passed);
    CHECK(row.tolerance == 1e-3);
  }
  const auto tiny = tiny_model_config(Task::kClassification);
  CHECK(tiny.points == 8);
  CHECK(tiny.features == 3);
  CHECK(tiny.classes == 3);
}

TEST_CASE("loss examples") {
  std::vector<int> labels{2, 0, 1};
  T64 onehot = T64::zeros({3, 3});
  for (Index r = 0; r < 3; ++r) onehot.mutable_value()[r * 3 + labels[std::size_t(r)]] = 100.0;
  CHECK(cross_entropy_loss(onehot, labels, Task::kClassification).item() < 1e-3);
  CHECK(argmax_labels(onehot) == labels);
  CHECK(cross_entropy_loss(T64::zeros({3, 3}), labels, Task::kClassification).item() ==
        doctest::Approx(std::log(3.0)));

  // two points of one cloud, two classes
  T64 seg = T64::from({1, 2, 2}, {0.3, -0.2, 1.0, 2.0});
  std::vector<int> point_labels{0, 0};
  const double l0 = std::log(1.0 + std::exp(-0.5));
  const double l1 = std::log(1.0 + std::exp(1.0));
  CHECK(cross_entropy_loss(seg, point_labels, Task::kPartSeg).item() == doctest::Approx((l0 + l1) / 2));

  std::vector<int> bad{0, 2};
  CHECK_THROWS_AS(cross_entropy_loss(seg, bad, Task::kPartSeg), DataError);
}

TEST_CASE("per-point argmax of forced logits") {
  std::vector<int> forced{3, 0, 0, 2, 1, 3};
  T64 logits = T64::full({1, 6, 4}, -5.0);
  for (Index i = 0; i < 6; ++i) logits.mutable_value()[i * 4 + forced[std::size_t(i)]] = 5.0;
  CHECK(argmax_labels(logits) == forced);
}

TEST_CASE("untrained loss is near ln P") {
  std::mt19937_64 rng(8);
  auto cfg = small(Task::kClassification, 64, 40);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    cfg.seed = seed;
    PyramNet<float> net(cfg);
    const auto x = random_input<float>(8, cfg, rng);
    std::vector<int> labels(8);
    for (int i = 0; i < 8; ++i) labels[std::size_t(i)] = (i * 7) % 40;
    NoGradGuard guard;
    total += cross_entropy_loss(net.logits(x, true, rng), labels, Task::kClassification).item();
  }
  CHECK(std::abs(total / 3.0 - std::log(40.0)) < 0.1);
}

}  // TEST_SUITE
