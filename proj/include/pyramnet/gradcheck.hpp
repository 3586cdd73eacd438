#pragma once

// Central finite-difference checks of backward() in 64-bit arithmetic.

#include "pyramnet/model.hpp"
#include "pyramnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace pyramnet {

using CheckTensor = Tensor<double>;

/// One differentiable computation. `make_inputs` returns the leaves to probe
/// (requires_grad set); `forward` maps them to an output of any shape. The
/// checked objective is sum(output * R) for a fixed random R.
struct GradCheckCase {
  std::string name;
  double tolerance = 1e-4;
  std::function<std::vector<CheckTensor>(std::mt19937_64&)> make_inputs;
  std::function<CheckTensor(const std::vector<CheckTensor>&)> forward;
  Index samples_per_input = 0;  // 0 probes every entry, otherwise a random subset
  bool end_to_end = false;      // whole-model composite rather than a single op
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::size_t probed = 0;
  std::size_t skipped = 0;  // entries where the function is not smooth at the probe step
  std::string detail;  // worst input and entry, or the exception text
};

struct GradCheckReport {
  std::vector<GradCheckResult> rows;

  bool passed() const;
  std::string to_text() const;
};

/// Per input tensor: max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-3 * case max);
/// the case error is the largest over its inputs. Entries whose central
/// difference changes when the step is halved sit on a kink and are skipped;
/// the case fails if more than kMaxSkippedFraction of its entries are skipped.
inline constexpr double kMaxSkippedFraction = 0.1;
GradCheckResult run_gradcheck(const GradCheckCase& check, std::uint64_t seed, double step = 1e-5);

/// Tiny end-to-end model settings: B=1, N=8, F=3, P=3 with narrow layers.
ModelConfig tiny_model_config(Task task);

class GradCheckSuite {
 public:
  /// Every differentiable op plus, optionally, the end-to-end model cases.
  static GradCheckSuite standard(bool end_to_end = true);

  void add(GradCheckCase check);
  /// Swaps the forward of a registered case (used for fault injection).
  void replace_forward(const std::string& name,
                       std::function<CheckTensor(const std::vector<CheckTensor>&)> forward);
  const std::vector<GradCheckCase>& cases() const { return cases_; }
  std::size_t op_count() const;

  GradCheckReport run(std::uint64_t seed = 7) const;

 private:
  std::vector<GradCheckCase> cases_;
};

}  // namespace pyramnet
