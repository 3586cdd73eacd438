#pragma once

#include "pyramnet/gem.hpp"
#include "pyramnet/ops.hpp"
#include "pyramnet/pan.hpp"
#include "pyramnet/pointcloud.hpp"
#include "pyramnet/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace pyramnet {

struct ModelConfig {
  Task task = Task::kClassification;
  Index points = 1024;  // N
  Index features = 3;   // F
  int classes = 40;     // P
  bool enable_gem = true;
  bool enable_pan = true;
  KRule k_rule;
  bool gem_correlation = false;
  Index stem_width = 32;
  std::vector<Index> mlp_widths{64, 128, 256, 512};
  std::vector<Index> head_widths{512, 256};
  // Indices into mlp_widths whose outputs feed each head as shortcuts.
  std::vector<Index> cls_shortcuts{2};
  std::vector<Index> seg_shortcuts{0, 1, 2};
  PyramidConfig pyramid;
  double dropout_keep = 0.65;
  double init_std = 0.1;
  double logit_init_std = 0.01;
  std::uint64_t seed = 0;
  bool free_form = false;  // skip the reference (task, N, F, P) check

  /// Reference settings: classification N=1024 F=3 P=40, part_seg N=2048 F=3
  /// P=50, scene_seg N=4096 F=9 P=13.
  static ModelConfig reference(Task task);

  void validate() const;
  /// Flat key=value text, one entry per line.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  bool operator==(const ModelConfig&) const = default;

  // Derived channel widths along the backbone.
  Index splice_width() const { return enable_gem ? 2 * stem_width : stem_width; }
  Index pan_width() const { return enable_pan ? pyramid.total_channels() : 0; }
  Index concat_width() const { return mlp_widths.back() + pan_width(); }
  Index gem2_width() const { return enable_gem ? 2 * concat_width() : concat_width(); }
  Index head_input_width() const;
  const std::vector<Index>& shortcuts() const {
    return task == Task::kClassification ? cls_shortcuts : seg_shortcuts;
  }
};

/// Named intermediate tensors of one forward pass, in recording order.
template <typename Scalar>
class ForwardTrace {
 public:
  void record(std::string stage, Tensor<Scalar> tensor);
  bool has(const std::string& stage) const;
  const Tensor<Scalar>& at(const std::string& stage) const;
  const std::vector<std::pair<std::string, Tensor<Scalar>>>& stages() const { return stages_; }
  /// "stage<TAB>shape" lines for shape audits.
  std::string shape_report() const;

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> stages_;
};

/// Shared per-point linear map followed by batch norm and ReLU.
template <typename Scalar>
struct SharedMlpLayer {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  BatchNormState<Scalar> bn;

  SharedMlpLayer(Index in, Index out, double init_std, std::mt19937_64& rng);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training);
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Array<Scalar>* values;
};

template <typename Scalar>
class PyramNet {
 public:
  explicit PyramNet(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Stages input .. post-gem2 for x[B, N, F]. Throws DimensionError when x
  /// does not match the configured N and F.
  ForwardTrace<Scalar> backbone_forward(const Tensor<Scalar>& x, bool training);
  /// Max pool over points, FC 512 -> 256 -> dropout -> P. Records head-in and logits.
  Tensor<Scalar> classify_head(ForwardTrace<Scalar>& trace, bool training, std::mt19937_64& rng);
  /// Shared FC 512 -> 256 -> P per point. Records head-in and logits.
  Tensor<Scalar> segment_head(ForwardTrace<Scalar>& trace, bool training);
  /// Backbone plus the configured task head.
  ForwardTrace<Scalar> forward(const Tensor<Scalar>& x, bool training, std::mt19937_64& rng);
  Tensor<Scalar> logits(const Tensor<Scalar>& x, bool training, std::mt19937_64& rng) {
    return forward(x, training, rng).at("logits");
  }

  std::vector<NamedParameter<Scalar>> parameters();
  std::vector<NamedBuffer<Scalar>> buffers();
  std::vector<BatchNormState<Scalar>*> batch_norms();
  Index parameter_count();
  void set_bn_decay(double decay);
  void zero_grad();

 private:
  GemOptions gem_options() const { return {config_.k_rule, config_.gem_correlation}; }
  Tensor<Scalar> head_input(ForwardTrace<Scalar>& trace) const;

  ModelConfig config_;
  std::vector<SharedMlpLayer<Scalar>> stem_;
  std::vector<SharedMlpLayer<Scalar>> top_;
  std::vector<PanBranch<Scalar>> pan_;
  std::vector<SharedMlpLayer<Scalar>> head_;
  Tensor<Scalar> logit_weight_;
  Tensor<Scalar> logit_bias_;
};

/// Mean cross-entropy over clouds (classification) or over all B*N points.
template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, std::span<const int> labels, Task task);

/// Row-wise argmax of logits viewed as rows x P (ties pick the lowest class).
template <typename Scalar>
std::vector<int> argmax_labels(const Tensor<Scalar>& logits);

}  // namespace pyramnet
