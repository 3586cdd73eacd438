#include "pyramnet/gradcheck.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/gem.hpp"
#include "pyramnet/ops.hpp"
#include "pyramnet/pan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>

namespace pyramnet {

namespace {

using Inputs = std::vector<CheckTensor>;

CheckTensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array<double> values(numel(shape));
  for (auto& v : values) v = u(rng);
  return CheckTensor(std::move(shape), std::move(values), true);
}

// Entries bounded away from zero so the ReLU kink is never straddled.
CheckTensor signed_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Array<double> values(numel(shape));
  for (auto& v : values) v = sign(rng) ? u(rng) : -u(rng);
  return CheckTensor(std::move(shape), std::move(values), true);
}

double objective_value(const CheckTensor& out, const Array<double>& weights) {
  return (out.value() * weights).sum();
}

GradCheckCase op_case(std::string name, std::function<Inputs(std::mt19937_64&)> make,
                      std::function<CheckTensor(const Inputs&)> forward) {
  GradCheckCase c;
  c.name = std::move(name);
  c.make_inputs = std::move(make);
  c.forward = std::move(forward);
  return c;
}

// Holds a model shared by the input factory and the forward closure.
template <typename Model>
struct Holder {
  std::unique_ptr<Model> model;
};

GradCheckCase model_case(std::string name, ModelConfig cfg, Index batch, bool training, double tolerance,
                         Index samples) {
  auto holder = std::make_shared<Holder<PyramNet<double>>>();
  auto x = std::make_shared<CheckTensor>();
  GradCheckCase c;
  c.name = std::move(name);
  c.tolerance = tolerance;
  c.samples_per_input = samples;
  c.end_to_end = true;
  c.make_inputs = [holder, x, cfg, batch](std::mt19937_64& rng) {
    holder->model = std::make_unique<PyramNet<double>>(cfg);
    *x = random_tensor({batch, cfg.points, cfg.features}, rng).set_requires_grad(false);
    // Non-trivial running statistics so inference-mode batch norm is exercised.
    std::uniform_real_distribution<double> mean(-0.2, 0.2), var(0.5, 1.5), affine(0.8, 1.2);
    for (auto* bn : holder->model->batch_norms()) {
      for (auto& v : bn->running_mean) v = mean(rng);
      for (auto& v : bn->running_var) v = var(rng);
      for (auto& v : bn->gamma.mutable_value()) v = affine(rng);
    }
    Inputs params;
    for (auto& p : holder->model->parameters()) params.push_back(p.tensor);
    return params;
  };
  c.forward = [holder, x, training](const Inputs&) {
    std::mt19937_64 dropout_rng(1234);
    return holder->model->logits(*x, training, dropout_rng);
  };
  return c;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.passed; });
}

std::string GradCheckReport::to_text() const {
  std::ostringstream out;
  char line[256];
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::snprintf(line, sizeof line, "%-*s  %12s  %9s  %9s  %s\n", static_cast<int>(width), "case", "max_rel_err",
                "tolerance", "skipped", "result");
  out << line;
  for (const auto& r : rows) {
    const std::string skipped = std::to_string(r.skipped) + "/" + std::to_string(r.probed);
    std::snprintf(line, sizeof line, "%-*s  %12.3e  %9.1e  %9s  %s", static_cast<int>(width), r.name.c_str(),
                  r.max_rel_error, r.tolerance, skipped.c_str(), r.passed ? "PASS" : "FAIL");
    out << line;
    if (!r.passed && !r.detail.empty()) out << "  (" << r.detail << ")";
    out << '\n';
  }
  out << (passed() ? "all cases passed" : "gradient check FAILED") << '\n';
  return out.str();
}

GradCheckResult run_gradcheck(const GradCheckCase& check, std::uint64_t seed, double step) {
  GradCheckResult result;
  result.name = check.name;
  result.tolerance = check.tolerance;
  try {
    std::mt19937_64 rng(seed);
    Inputs inputs = check.make_inputs(rng);

    CheckTensor probe;
    {
      NoGradGuard guard;
      probe = check.forward(inputs);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Array<double> weights(probe.size());
    for (auto& w : weights) w = normal(rng);

    for (auto& t : inputs) t.zero_grad();
    const CheckTensor out = check.forward(inputs);
    backward(sum(mul(out, CheckTensor(out.shape(), weights))));

    auto evaluate = [&] {
      NoGradGuard guard;
      return objective_value(check.forward(inputs), weights);
    };

    struct Probe {
      std::vector<Index> entries;
      std::vector<double> analytic, numeric, confirm;
    };
    std::vector<Probe> probes(inputs.size());
    double case_scale = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      CheckTensor& t = inputs[i];
      Probe& probe = probes[i];
      const Array<double> analytic = t.has_grad() ? t.grad() : Array<double>::Zero(t.size());
      probe.entries.resize(static_cast<std::size_t>(t.size()));
      std::iota(probe.entries.begin(), probe.entries.end(), Index{0});
      if (check.samples_per_input > 0 && t.size() > check.samples_per_input) {
        std::shuffle(probe.entries.begin(), probe.entries.end(), rng);
        probe.entries.resize(static_cast<std::size_t>(check.samples_per_input));
      }
      for (Index j : probe.entries) {
        double& v = t.mutable_value()[j];
        const double original = v;
        auto central = [&](double h) {
          v = original + h;
          const double plus = evaluate();
          v = original - h;
          const double minus = evaluate();
          v = original;
          return (plus - minus) / (2.0 * h);
        };
        probe.analytic.push_back(analytic[j]);
        probe.numeric.push_back(central(step));
        probe.confirm.push_back(central(0.5 * step));
        case_scale = std::max({case_scale, std::abs(probe.analytic.back()), std::abs(probe.numeric.back())});
      }
    }

    std::size_t probed = 0, skipped = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const Probe& probe = probes[i];
      double scale = std::max(1e-8, 1e-3 * case_scale);
      for (std::size_t e = 0; e < probe.entries.size(); ++e) {
        scale = std::max({scale, std::abs(probe.analytic[e]), std::abs(probe.numeric[e])});
      }
      double max_diff = 0.0;
      Index worst = -1;
      for (std::size_t e = 0; e < probe.entries.size(); ++e) {
        ++probed;
        // Differences that move with the step straddle a kink (ReLU, max, top-k
        // switch); the finite-difference oracle is undefined there.
        if (std::abs(probe.numeric[e] - probe.confirm[e]) > 0.5 * check.tolerance * scale) {
          ++skipped;
          continue;
        }
        const double diff = std::abs(probe.analytic[e] - probe.numeric[e]);
        if (diff > max_diff) {
          max_diff = diff;
          worst = probe.entries[e];
        }
      }
      const double rel = max_diff / scale;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.detail = "input " + std::to_string(i) + " entry " + std::to_string(worst);
      }
    }
    result.probed = probed;
    result.skipped = skipped;
    if (static_cast<double>(skipped) > kMaxSkippedFraction * static_cast<double>(probed)) {
      result.passed = false;
      result.detail = std::to_string(skipped) + " of " + std::to_string(probed) + " entries non-smooth";
      return result;
    }
    result.passed = result.max_rel_error < check.tolerance;
  } catch (const std::exception& e) {
    result.passed = false;
    result.max_rel_error = INFINITY;
    result.detail = e.what();
  }
  return result;
}

ModelConfig tiny_model_config(Task task) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.points = 8;
  cfg.features = 3;
  cfg.classes = 3;
  cfg.free_form = true;
  cfg.stem_width = 8;
  cfg.mlp_widths = {8, 8, 8, 16};
  cfg.head_widths = {16, 8};
  cfg.pyramid.channels = {2, 2, 2, 2};
  cfg.seed = 11;
  return cfg;
}

GradCheckSuite GradCheckSuite::standard(bool end_to_end) {
  GradCheckSuite s;
  s.add(op_case(
      "add", [](auto& rng) { return Inputs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}; },
      [](const Inputs& in) { return pyramnet::add(in[0], in[1]); }));
  s.add(op_case(
      "mul", [](auto& rng) { return Inputs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}; },
      [](const Inputs& in) { return mul(in[0], in[1]); }));
  s.add(op_case(
      "scale", [](auto& rng) { return Inputs{random_tensor({2, 5}, rng)}; },
      [](const Inputs& in) { return scale(in[0], -1.75); }));
  s.add(op_case(
      "sum", [](auto& rng) { return Inputs{random_tensor({3, 2, 2}, rng)}; },
      [](const Inputs& in) { return sum(in[0]); }));
  s.add(op_case(
      "reshape", [](auto& rng) { return Inputs{random_tensor({2, 6}, rng)}; },
      [](const Inputs& in) { return reshape(in[0], {3, 1, 4}); }));
  s.add(op_case(
      "concat",
      [](auto& rng) { return Inputs{random_tensor({2, 3, 2}, rng), random_tensor({2, 3, 5}, rng)}; },
      [](const Inputs& in) { return concat(in); }));
  s.add(op_case(
      "pointwise_linear",
      [](auto& rng) {
        return Inputs{random_tensor({5, 3}, rng), random_tensor({3, 7}, rng), random_tensor({7}, rng)};
      },
      [](const Inputs& in) { return pointwise_linear(in[0], in[1], in[2]); }));
  s.add(op_case(
      "relu", [](auto& rng) { return Inputs{signed_tensor({4, 6}, rng)}; },
      [](const Inputs& in) { return relu(in[0]); }));
  s.add(op_case(
      "global_avg_pool", [](auto& rng) { return Inputs{random_tensor({2, 4, 3}, rng)}; },
      [](const Inputs& in) { return global_avg_pool(in[0], 1); }));
  s.add(op_case(
      "max_pool_over_points", [](auto& rng) { return Inputs{random_tensor({2, 6, 3}, rng)}; },
      [](const Inputs& in) { return max_pool_over_points(in[0], 1); }));
  s.add(op_case(
      "dropout", [](auto& rng) { return Inputs{random_tensor({4, 5}, rng)}; },
      [](const Inputs& in) {
        std::mt19937_64 mask_rng(42);
        return dropout(in[0], 0.65, true, mask_rng);
      }));
  s.add(op_case(
      "softmax_cross_entropy", [](auto& rng) { return Inputs{random_tensor({4, 5}, rng, -2.0, 2.0)}; },
      [](const Inputs& in) {
        static const int labels[] = {0, 3, 1, 4};
        return softmax_cross_entropy(in[0], std::span<const int>(labels));
      }));
  for (const bool training : {true, false}) {
    s.add(op_case(
        training ? "batch_norm_train" : "batch_norm_infer",
        [](auto& rng) {
          return Inputs{random_tensor({4, 3}, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)};
        },
        [training](const Inputs& in) {
          BatchNormState<double> state(3);
          state.gamma = in[1];
          state.beta = in[2];
          state.running_mean << 0.1, -0.2, 0.3;
          state.running_var << 0.5, 1.5, 2.0;
          return batch_norm(in[0], state, training);
        }));
  }
  s.add(op_case(
      "conv2d",
      [](auto& rng) {
        return Inputs{random_tensor({8, 8, 2}, rng), random_tensor({3, 3, 2, 4}, rng), random_tensor({4}, rng)};
      },
      [](const Inputs& in) { return conv2d(in[0], in[1], in[2], Stride2d{2, 2}); }));
  s.add(op_case(
      "conv2d_batched",
      [](auto& rng) {
        return Inputs{random_tensor({2, 7, 5, 1}, rng), random_tensor({5, 5, 1, 3}, rng), random_tensor({3}, rng)};
      },
      [](const Inputs& in) { return conv2d(in[0], in[1], in[2], Stride2d{4, 1}); }));
  s.add(op_case(
      "bilinear_resize", [](auto& rng) { return Inputs{random_tensor({2, 3, 2, 2}, rng)}; },
      [](const Inputs& in) { return bilinear_resize(in[0], 7, 5); }));
  s.add(op_case(
      "covariance", [](auto& rng) { return Inputs{random_tensor({2, 5, 4}, rng)}; },
      [](const Inputs& in) { return covariance(in[0]); }));
  {
    auto selections = std::make_shared<std::vector<AdjacencySimilarityMatrix<double>>>();
    s.add(op_case(
        "gather_mean",
        [selections](auto& rng) {
          selections->clear();
          for (int b = 0; b < 2; ++b) {
            const CheckTensor scores = random_tensor({6, 6}, rng);
            selections->push_back(top_k_select(scores.matrix(), 3));
          }
          return Inputs{random_tensor({2, 6, 4}, rng)};
        },
        [selections](const Inputs& in) { return gather_mean(in[0], *selections); }));
  }
  s.add(op_case(
      "gem_forward", [](auto& rng) { return Inputs{random_tensor({2, 6, 1, 5}, rng)}; },
      [](const Inputs& in) { return gem_forward(in[0]).output; }));
  {
    auto branch = std::make_shared<std::unique_ptr<PanBranch<double>>>();
    s.add(op_case(
        "pan_branch",
        [branch](auto& rng) {
          *branch = std::make_unique<PanBranch<double>>(3, 2, 3, rng, 0.5);
          auto& b = **branch;
          b.bias = random_tensor({3}, rng);
          b.bn.gamma = random_tensor({3}, rng, 0.5, 1.5);
          return Inputs{random_tensor({2, 8, 6}, rng), b.weight, b.bias, b.bn.gamma, b.bn.beta};
        },
        [branch](const Inputs& in) { return pan_branch(in[0], **branch, true); }));
  }
  {
    auto branches = std::make_shared<std::vector<PanBranch<double>>>();
    s.add(op_case(
        "pan_forward",
        [branches](auto& rng) {
          PyramidConfig cfg;
          cfg.channels = {2, 2, 2, 2};
          *branches = make_pan_branches<double>(cfg, rng, 0.5);
          Inputs in{random_tensor({2, 16, 8}, rng)};
          for (auto& b : *branches) {
            in.push_back(b.weight);
            in.push_back(b.bn.gamma);
          }
          return in;
        },
        [branches](const Inputs& in) { return pan_forward(in[0], *branches, true); }));
  }
  s.add(op_case(
      "pan_collapse", [](auto& rng) { return Inputs{random_tensor({2, 4, 3, 5}, rng)}; },
      [](const Inputs& in) { return pan_collapse(in[0]); }));

  if (end_to_end) {
    s.add(model_case("model/classification_b1", tiny_model_config(Task::kClassification), 1, false, 1e-3, 0));
    s.add(model_case("model/part_seg_b1", tiny_model_config(Task::kPartSeg), 1, true, 1e-3, 0));
    s.add(model_case("model/classification_b4_train", tiny_model_config(Task::kClassification), 4, true, 1e-3, 0));
    ModelConfig full = ModelConfig::reference(Task::kClassification);
    full.points = 16;
    full.classes = 4;
    full.free_form = true;
    full.seed = 5;
    s.add(model_case("model/classification_b2_full_width", full, 2, false, 1e-3, 3));
  }
  return s;
}

void GradCheckSuite::add(GradCheckCase check) {
  for (const auto& c : cases_) {
    if (c.name == check.name) throw InternalError("duplicate gradient check case '" + check.name + "'");
  }
  cases_.push_back(std::move(check));
}

void GradCheckSuite::replace_forward(const std::string& name,
                                     std::function<CheckTensor(const std::vector<CheckTensor>&)> forward) {
  for (auto& c : cases_) {
    if (c.name == name) {
      c.forward = std::move(forward);
      return;
    }
  }
  throw ConfigError("no gradient check case named '" + name + "'");
}

std::size_t GradCheckSuite::op_count() const {
  return static_cast<std::size_t>(
      std::count_if(cases_.begin(), cases_.end(), [](const auto& c) { return !c.end_to_end; }));
}

GradCheckReport GradCheckSuite::run(std::uint64_t seed) const {
  GradCheckReport report;
  for (const auto& c : cases_) report.rows.push_back(run_gradcheck(c, seed));
  return report;
}

}  // namespace pyramnet
