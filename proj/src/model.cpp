#include "pyramnet/model.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/init.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace pyramnet {

namespace {

std::string format_list(const std::vector<Index>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& text) {
  std::vector<Index> values;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + text + "' is not a list of integers");
    }
  }
  return values;
}

// Shortest text that parses back to the same double.
std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  }
  return value;
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long value = 0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
  }
  return value;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1, got '" + text + "'");
}

}  // namespace

ModelConfig ModelConfig::reference(Task task) {
  ModelConfig cfg;
  cfg.task = task;
  switch (task) {
    case Task::kClassification:
      cfg.points = 1024, cfg.features = 3, cfg.classes = 40;
      break;
    case Task::kPartSeg:
      cfg.points = 2048, cfg.features = 3, cfg.classes = 50;
      break;
    case Task::kSceneSeg:
      cfg.points = 4096, cfg.features = 9, cfg.classes = 13;
      break;
  }
  return cfg;
}

Index ModelConfig::head_input_width() const {
  Index width = gem2_width();
  for (Index s : shortcuts()) width += mlp_widths[static_cast<std::size_t>(s)];
  return width;
}

void ModelConfig::validate() const {
  if (points < 2) throw ConfigError("model needs N >= 2 points, got " + std::to_string(points));
  if (features < 3) throw ConfigError("model needs F >= 3 input channels, got " + std::to_string(features));
  if (classes < 1) throw ConfigError("model needs P >= 1 classes");
  if (stem_width < 1) throw ConfigError("stem width must be >= 1");
  if (mlp_widths.empty()) throw ConfigError("mlp_widths must not be empty");
  for (Index w : mlp_widths) {
    if (w < 1) throw ConfigError("mlp_widths entries must be >= 1");
  }
  for (Index w : head_widths) {
    if (w < 1) throw ConfigError("head_widths entries must be >= 1");
  }
  for (const auto* list : {&cls_shortcuts, &seg_shortcuts}) {
    for (Index s : *list) {
      if (s < 0 || s >= static_cast<Index>(mlp_widths.size())) {
        throw ConfigError("shortcut index " + std::to_string(s) + " outside mlp_widths");
      }
    }
  }
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout_keep must be in (0, 1], got " + format_double(dropout_keep));
  }
  if (!(init_std > 0.0) || !(logit_init_std > 0.0)) throw ConfigError("init std must be positive");
  if (k_rule.kind == KRule::Kind::kFixed && k_rule.fixed >= points) {
    throw ConfigError("k = " + std::to_string(k_rule.fixed) + " must be smaller than N = " +
                      std::to_string(points));
  }
  if (enable_pan) pyramid.validate(!free_form);
  if (free_form) return;
  const bool ok = (task == Task::kClassification && points == 1024 && features == 3) ||
                  (task == Task::kPartSeg && points == 2048 && features == 3) ||
                  (task == Task::kSceneSeg && points == 4096 && features == 9 && classes == 13);
  if (!ok) {
    throw ConfigError("(task, N, F, P) = (" + to_string(task) + ", " + std::to_string(points) + ", " +
                      std::to_string(features) + ", " + std::to_string(classes) +
                      ") is not a reference setting; enable free-form mode to use it");
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  out << "task=" << to_string(task) << '\n'
      << "points=" << points << '\n'
      << "features=" << features << '\n'
      << "classes=" << classes << '\n'
      << "enable_gem=" << enable_gem << '\n'
      << "enable_pan=" << enable_pan << '\n'
      << "k_rule=" << k_rule.to_string() << '\n'
      << "gem_correlation=" << gem_correlation << '\n'
      << "stem_width=" << stem_width << '\n'
      << "mlp_widths=" << format_list(mlp_widths) << '\n'
      << "head_widths=" << format_list(head_widths) << '\n'
      << "cls_shortcuts=" << format_list(cls_shortcuts) << '\n'
      << "seg_shortcuts=" << format_list(seg_shortcuts) << '\n'
      << "pyramid_kernels=" << PyramidConfig::format(pyramid.kernels) << '\n'
      << "pyramid_strides=" << PyramidConfig::format(pyramid.strides) << '\n'
      << "pyramid_channels=" << PyramidConfig::format(pyramid.channels) << '\n'
      << "dropout_keep=" << format_double(dropout_keep) << '\n'
      << "init_std=" << format_double(init_std) << '\n'
      << "logit_init_std=" << format_double(logit_init_std) << '\n'
      << "seed=" << seed << '\n'
      << "free_form=" << free_form << '\n';
  return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line '" + line + "' has no '='");
    entries[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig cfg;
  for (const auto& [key, value] : entries) {
    if (key == "task") cfg.task = parse_task(value);
    else if (key == "points") cfg.points = parse_integer(key, value);
    else if (key == "features") cfg.features = parse_integer(key, value);
    else if (key == "classes") cfg.classes = static_cast<int>(parse_integer(key, value));
    else if (key == "enable_gem") cfg.enable_gem = parse_flag(key, value);
    else if (key == "enable_pan") cfg.enable_pan = parse_flag(key, value);
    else if (key == "k_rule") cfg.k_rule = KRule::parse(value);
    else if (key == "gem_correlation") cfg.gem_correlation = parse_flag(key, value);
    else if (key == "stem_width") cfg.stem_width = parse_integer(key, value);
    else if (key == "mlp_widths") cfg.mlp_widths = parse_index_list(key, value);
    else if (key == "head_widths") cfg.head_widths = parse_index_list(key, value);
    else if (key == "cls_shortcuts") cfg.cls_shortcuts = parse_index_list(key, value);
    else if (key == "seg_shortcuts") cfg.seg_shortcuts = parse_index_list(key, value);
    else if (key == "pyramid_kernels") cfg.pyramid.kernels = PyramidConfig::parse_list(value);
    else if (key == "pyramid_strides") cfg.pyramid.strides = PyramidConfig::parse_list(value);
    else if (key == "pyramid_channels") cfg.pyramid.channels = PyramidConfig::parse_list(value);
    else if (key == "dropout_keep") cfg.dropout_keep = parse_double(key, value);
    else if (key == "init_std") cfg.init_std = parse_double(key, value);
    else if (key == "logit_init_std") cfg.logit_init_std = parse_double(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_integer(key, value));
    else if (key == "free_form") cfg.free_form = parse_flag(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return cfg;
}

template <typename Scalar>
void ForwardTrace<Scalar>::record(std::string stage, Tensor<Scalar> tensor) {
  for (auto& [name, t] : stages_) {
    if (name == stage) {
      t = std::move(tensor);
      return;
    }
  }
  stages_.emplace_back(std::move(stage), std::move(tensor));
}

template <typename Scalar>
bool ForwardTrace<Scalar>::has(const std::string& stage) const {
  for (const auto& entry : stages_) {
    if (entry.first == stage) return true;
  }
  return false;
}

template <typename Scalar>
const Tensor<Scalar>& ForwardTrace<Scalar>::at(const std::string& stage) const {
  for (const auto& entry : stages_) {
    if (entry.first == stage) return entry.second;
  }
  throw InternalError("forward trace has no stage '" + stage + "'");
}

template <typename Scalar>
std::string ForwardTrace<Scalar>::shape_report() const {
  std::ostringstream out;
  for (const auto& [name, t] : stages_) out << name << '\t' << to_string(t.shape()) << '\n';
  return out.str();
}

template <typename Scalar>
SharedMlpLayer<Scalar>::SharedMlpLayer(Index in, Index out, double init_std, std::mt19937_64& rng)
    : weight(truncated_normal<Scalar>({in, out}, init_std, rng)),
      bias(zero_parameter<Scalar>({out})),
      bn(out) {}

template <typename Scalar>
Tensor<Scalar> SharedMlpLayer<Scalar>::operator()(const Tensor<Scalar>& x, bool training) {
  return relu(batch_norm(pointwise_linear(x, weight, bias), bn, training));
}

template <typename Scalar>
PyramNet<Scalar>::PyramNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(config_.seed, 0x4d4f44454cULL));
  const double std = config_.init_std;
  stem_.emplace_back(config_.features, config_.stem_width, std, rng);
  Index width = config_.splice_width();
  for (Index w : config_.mlp_widths) {
    top_.emplace_back(width, w, std, rng);
    width = w;
  }
  if (config_.enable_pan) pan_ = make_pan_branches<Scalar>(config_.pyramid, rng, std);
  width = config_.head_input_width();
  for (Index w : config_.head_widths) {
    head_.emplace_back(width, w, std, rng);
    width = w;
  }
  logit_weight_ = truncated_normal<Scalar>({width, config_.classes}, config_.logit_init_std, rng);
  logit_bias_ = zero_parameter<Scalar>({config_.classes});
}

namespace {
template <typename Scalar>
const Tensor<Scalar>& expect_shape(const Tensor<Scalar>& t, const Shape& shape, const char* stage) {
  if (t.shape() != shape) {
    throw InternalError("stage " + std::string(stage) + ": expected " + to_string(shape) + ", got " +
                        to_string(t.shape()));
  }
  return t;
}
}  // namespace

template <typename Scalar>
ForwardTrace<Scalar> PyramNet<Scalar>::backbone_forward(const Tensor<Scalar>& x, bool training) {
  const auto& cfg = config_;
  if (x.rank() != 3 || x.dim(1) != cfg.points || x.dim(2) != cfg.features) {
    throw DimensionError("model input must be B x " + std::to_string(cfg.points) + " x " +
                         std::to_string(cfg.features) + ", got " + to_string(x.shape()));
  }
  const Index b = x.dim(0), n = cfg.points;
  ForwardTrace<Scalar> trace;
  trace.record("input", x);

  Tensor<Scalar> h = x;
  for (auto& layer : stem_) h = layer(h, training);
  h = reshape(h, {b, n, 1, cfg.stem_width});
  trace.record("post-mlp1", expect_shape(h, {b, n, 1, cfg.stem_width}, "post-mlp1"));

  if (cfg.enable_gem) {
    auto gem = gem_forward(h, gem_options());
    trace.record("gem1-covariance", gem.covariance);
    h = gem.output;
    trace.record("post-gem1", expect_shape(h, {b, n, 1, cfg.splice_width()}, "post-gem1"));
  }

  const Tensor<Scalar> splice = reshape(h, {b, n, cfg.splice_width()});
  trace.record("splice", splice);

  Tensor<Scalar> top = splice;
  for (std::size_t i = 0; i < top_.size(); ++i) {
    top = top_[i](top, training);
    trace.record("mlp-top." + std::to_string(i), top);
  }
  const Index top_width = cfg.mlp_widths.back();
  top = reshape(top, {b, n, 1, top_width});
  trace.record("mlp-top", top);

  Tensor<Scalar> joined = top;
  if (cfg.enable_pan) {
    const Tensor<Scalar> pyramid = pan_forward(splice, pan_, training);
    trace.record("pan-out", expect_shape(pyramid, {b, n, cfg.splice_width(), cfg.pan_width()}, "pan-out"));
    const Tensor<Scalar> gap = pan_collapse(pyramid);
    trace.record("pan-gap", expect_shape(gap, {b, n, 1, cfg.pan_width()}, "pan-gap"));
    joined = concat<Scalar>({top, gap});
  }
  trace.record("concat", expect_shape(joined, {b, n, 1, cfg.concat_width()}, "concat"));

  if (cfg.enable_gem) {
    auto gem = gem_forward(joined, gem_options());
    trace.record("gem2-covariance", gem.covariance);
    joined = gem.output;
  }
  trace.record("post-gem2", expect_shape(joined, {b, n, 1, cfg.gem2_width()}, "post-gem2"));
  return trace;
}

template <typename Scalar>
Tensor<Scalar> PyramNet<Scalar>::head_input(ForwardTrace<Scalar>& trace) const {
  const Tensor<Scalar>& deep = trace.at("post-gem2");
  const Index b = deep.dim(0), n = deep.dim(1);
  std::vector<Tensor<Scalar>> parts{reshape(deep, {b, n, config_.gem2_width()})};
  for (Index s : config_.shortcuts()) parts.push_back(trace.at("mlp-top." + std::to_string(s)));
  Tensor<Scalar> in = parts.size() == 1 ? parts[0] : concat(parts);
  trace.record("head-in", expect_shape(in, {b, n, config_.head_input_width()}, "head-in"));
  return in;
}

template <typename Scalar>
Tensor<Scalar> PyramNet<Scalar>::classify_head(ForwardTrace<Scalar>& trace, bool training,
                                               std::mt19937_64& rng) {
  if (config_.task != Task::kClassification) {
    throw ConfigError("classify_head needs a classification model, got " + to_string(config_.task));
  }
  Tensor<Scalar> h = max_pool_over_points(head_input(trace), 1);
  for (auto& layer : head_) h = layer(h, training);
  h = dropout(h, static_cast<Scalar>(config_.dropout_keep), training, rng);
  Tensor<Scalar> logits = pointwise_linear(h, logit_weight_, logit_bias_);
  trace.record("logits", logits);
  return logits;
}

template <typename Scalar>
Tensor<Scalar> PyramNet<Scalar>::segment_head(ForwardTrace<Scalar>& trace, bool training) {
  if (!is_segmentation(config_.task)) {
    throw ConfigError("segment_head needs a segmentation model, got " + to_string(config_.task));
  }
  Tensor<Scalar> h = head_input(trace);
  for (auto& layer : head_) h = layer(h, training);
  Tensor<Scalar> logits = pointwise_linear(h, logit_weight_, logit_bias_);
  trace.record("logits", logits);
  return logits;
}

template <typename Scalar>
ForwardTrace<Scalar> PyramNet<Scalar>::forward(const Tensor<Scalar>& x, bool training,
                                               std::mt19937_64& rng) {
  ForwardTrace<Scalar> trace = backbone_forward(x, training);
  if (config_.task == Task::kClassification) {
    classify_head(trace, training, rng);
  } else {
    segment_head(trace, training);
  }
  return trace;
}

template <typename Scalar>
std::vector<NamedParameter<Scalar>> PyramNet<Scalar>::parameters() {
  std::vector<NamedParameter<Scalar>> out;
  auto add_layer = [&out](const std::string& prefix, SharedMlpLayer<Scalar>& layer) {
    out.push_back({prefix + ".weight", layer.weight});
    out.push_back({prefix + ".bias", layer.bias});
    out.push_back({prefix + ".bn.gamma", layer.bn.gamma});
    out.push_back({prefix + ".bn.beta", layer.bn.beta});
  };
  for (std::size_t i = 0; i < stem_.size(); ++i) add_layer("stem." + std::to_string(i), stem_[i]);
  for (std::size_t i = 0; i < top_.size(); ++i) add_layer("mlp." + std::to_string(i), top_[i]);
  for (std::size_t i = 0; i < pan_.size(); ++i) {
    const std::string prefix = "pan." + std::to_string(i);
    out.push_back({prefix + ".weight", pan_[i].weight});
    out.push_back({prefix + ".bias", pan_[i].bias});
    out.push_back({prefix + ".bn.gamma", pan_[i].bn.gamma});
    out.push_back({prefix + ".bn.beta", pan_[i].bn.beta});
  }
  for (std::size_t i = 0; i < head_.size(); ++i) add_layer("head." + std::to_string(i), head_[i]);
  out.push_back({"logits.weight", logit_weight_});
  out.push_back({"logits.bias", logit_bias_});
  return out;
}

template <typename Scalar>
std::vector<NamedBuffer<Scalar>> PyramNet<Scalar>::buffers() {
  std::vector<NamedBuffer<Scalar>> out;
  auto add_bn = [&out](const std::string& prefix, BatchNormState<Scalar>& bn) {
    out.push_back({prefix + ".bn.running_mean", &bn.running_mean});
    out.push_back({prefix + ".bn.running_var", &bn.running_var});
  };
  for (std::size_t i = 0; i < stem_.size(); ++i) add_bn("stem." + std::to_string(i), stem_[i].bn);
  for (std::size_t i = 0; i < top_.size(); ++i) add_bn("mlp." + std::to_string(i), top_[i].bn);
  for (std::size_t i = 0; i < pan_.size(); ++i) add_bn("pan." + std::to_string(i), pan_[i].bn);
  for (std::size_t i = 0; i < head_.size(); ++i) add_bn("head." + std::to_string(i), head_[i].bn);
  return out;
}

template <typename Scalar>
std::vector<BatchNormState<Scalar>*> PyramNet<Scalar>::batch_norms() {
  std::vector<BatchNormState<Scalar>*> out;
  for (auto& l : stem_) out.push_back(&l.bn);
  for (auto& l : top_) out.push_back(&l.bn);
  for (auto& b : pan_) out.push_back(&b.bn);
  for (auto& l : head_) out.push_back(&l.bn);
  return out;
}

template <typename Scalar>
Index PyramNet<Scalar>::parameter_count() {
  Index total = 0;
  for (const auto& p : parameters()) total += p.tensor.size();
  return total;
}

template <typename Scalar>
void PyramNet<Scalar>::set_bn_decay(double decay) {
  for (auto* bn : batch_norms()) bn->decay = static_cast<Scalar>(decay);
}

template <typename Scalar>
void PyramNet<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, std::span<const int> labels, Task task) {
  const Index rows = logits.size() / logits.dim(-1);
  const Index expected = task == Task::kClassification ? logits.dim(0) : rows;
  if (task == Task::kClassification && logits.rank() != 2) {
    throw DimensionError("classification logits must be B x P, got " + to_string(logits.shape()));
  }
  if (static_cast<Index>(labels.size()) != expected) {
    throw DimensionError("loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(expected) + " predictions");
  }
  return softmax_cross_entropy(logits, labels);
}

template <typename Scalar>
std::vector<int> argmax_labels(const Tensor<Scalar>& logits) {
  const auto m = logits.matrix();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

#define PYRAMNET_INSTANTIATE(S)                                                                   \
  template class ForwardTrace<S>;                                                                 \
  template struct SharedMlpLayer<S>;                                                              \
  template class PyramNet<S>;                                                                     \
  template Tensor<S> cross_entropy_loss(const Tensor<S>&, std::span<const int>, Task);            \
  template std::vector<int> argmax_labels(const Tensor<S>&);
PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
