#include "pyramnet/harness.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/init.hpp"
#include "pyramnet/log.hpp"
#include "pyramnet/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pyramnet {

namespace {

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

// Classification ranks by overall accuracy, segmentation by mIoU.
double headline(const MetricReport& report) {
  return report.task == Task::kClassification ? report.overall_accuracy : report.miou;
}

MetricInputs metric_inputs(const Dataset& dataset, std::span<const int> pred, std::span<const int> labels) {
  MetricInputs in;
  in.pred = pred;
  in.labels = labels;
  in.task = dataset.task;
  in.num_classes = dataset.num_classes;
  in.class_names = dataset.class_names;
  if (dataset.task == Task::kPartSeg) {
    in.points_per_shape = dataset.points_per_cloud();
    in.categories = dataset.categories;
    for (const auto& c : dataset.clouds) in.shape_categories.push_back(c.cloud_label);
  }
  return in;
}

std::vector<int> dataset_labels(const Dataset& dataset) {
  std::vector<int> labels;
  for (const auto& c : dataset.clouds) {
    if (dataset.task == Task::kClassification) {
      labels.push_back(c.cloud_label);
    } else {
      labels.insert(labels.end(), c.point_labels.begin(), c.point_labels.end());
    }
  }
  return labels;
}

}  // namespace

std::string RunConfig::format() const {
  std::ostringstream out;
  out << "command=" << command << '\n'
      << "data_root=" << data_root << '\n'
      << "train_split=" << train_split << '\n'
      << "test_split=" << test_split << '\n'
      << "epochs=" << epochs << '\n'
      << "batch_size=" << batch_size << '\n'
      << "lr=" << format_double(lr) << '\n'
      << "adam.beta1=" << format_double(beta1) << '\n'
      << "adam.beta2=" << format_double(beta2) << '\n'
      << "adam.epsilon=" << format_double(adam_epsilon) << '\n'
      << "bn_decay.initial=" << format_double(bn_decay.initial) << '\n'
      << "bn_decay.rate=" << format_double(bn_decay.rate) << '\n'
      << "bn_decay.step=" << format_double(bn_decay.step) << '\n'
      << "bn_decay.ceiling=" << format_double(bn_decay.ceiling) << '\n'
      << "seed=" << seed << '\n'
      << "checkpoint=" << checkpoint << '\n'
      << "report=" << report << '\n'
      << "eval_every=" << eval_every << '\n'
      << "checkpoint_every=" << checkpoint_every << '\n'
      << "augment=" << augment.enabled << '\n'
      << "augment.rotate=" << augment.rotate << '\n'
      << "augment.jitter_sigma=" << format_double(augment.jitter_sigma) << '\n'
      << "augment.jitter_clip=" << format_double(augment.jitter_clip) << '\n'
      << "f64=" << f64 << '\n';
  std::istringstream model_lines(model.serialize());
  std::string line;
  while (std::getline(model_lines, line)) out << "model." << line << '\n';
  return out.str();
}

void RunConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (eval_every < 1 || checkpoint_every < 1) throw ConfigError("eval/checkpoint cadence must be >= 1");
  if (!(bn_decay.initial >= 0.0 && bn_decay.ceiling <= 1.0 && bn_decay.step > 0.0)) {
    throw ConfigError("invalid batch-norm decay schedule");
  }
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : report.classes) {
    classes.push_back({{"name", c.name}, {"recall", c.recall}, {"iou", c.iou}, {"support", c.support}});
  }
  return {{"task", to_string(report.task)},
          {"overall_accuracy", report.overall_accuracy},
          {"avg_class_accuracy", report.avg_class_accuracy},
          {"miou", report.miou},
          {"epoch", report.epoch},
          {"seconds", report.seconds},
          {"classes", classes}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  r.avg_class_accuracy = j.at("avg_class_accuracy").get<double>();
  r.miou = j.at("miou").get<double>();
  r.epoch = j.value("epoch", -1);
  r.seconds = j.value("seconds", 0.0);
  for (const auto& c : j.value("classes", nlohmann::json::array())) {
    r.classes.push_back({c.at("name").get<std::string>(), c.at("recall").get<double>(), c.at("iou").get<double>(),
                         c.at("support").get<Index>()});
  }
  return r;
}

JsonLog::JsonLog(std::string path) : path_(std::move(path)) {}

void JsonLog::write(const nlohmann::json& record) {
  if (!enabled()) return;
  bool needs_newline = false;
  {
    std::ifstream in(path_, std::ios::binary | std::ios::ate);
    if (in && in.tellg() > 0) {
      in.seekg(-1, std::ios::end);
      needs_newline = in.get() != '\n';
    }
  }
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to log '" + path_ + "'");
  if (needs_newline) out << '\n';
  out << record.dump() << '\n';
  out.flush();
}

std::vector<nlohmann::json> read_json_lines(const std::string& path, std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open log '" + path + "'");
  std::vector<nlohmann::json> records;
  std::size_t bad = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++bad;
      continue;
    }
    records.push_back(std::move(j));
  }
  if (skipped) *skipped = bad;
  return records;
}

std::string summarize_log(const std::vector<nlohmann::json>& records) {
  std::optional<MetricReport> final_eval, best_eval, final_train;
  int epochs = 0;
  double last_loss = NAN;
  for (const auto& r : records) {
    const std::string type = r.value("type", "");
    if (type == "epoch") {
      ++epochs;
      last_loss = r.value("loss", NAN);
      if (r.contains("eval")) {
        MetricReport m = metric_report_from_json(r["eval"]);
        final_eval = m;
        if (!best_eval || headline(m) > headline(*best_eval)) best_eval = m;
      }
    } else if (type == "final" && r.contains("train")) {
      final_train = metric_report_from_json(r["train"]);
    }
  }
  std::ostringstream out;
  out << "epoch records: " << epochs << "  last loss: " << last_loss << '\n';
  auto line = [&out](const char* label, const std::optional<MetricReport>& m) {
    if (!m) {
      out << label << ": none\n";
      return;
    }
    char buffer[200];
    std::snprintf(buffer, sizeof buffer, "%s: epoch %d  overall %.4f  avg-class %.4f  mIoU %.4f\n", label, m->epoch,
                  m->overall_accuracy, m->avg_class_accuracy, m->miou);
    out << buffer;
  };
  line("final eval", final_eval);
  line("best eval", best_eval);
  line("final train", final_train);
  return out.str();
}

void check_compatible(const ModelConfig& model, const Dataset& dataset) {
  if (dataset.task != model.task) {
    throw ConfigError("dataset task " + to_string(dataset.task) + " does not match model task " +
                      to_string(model.task));
  }
  if (dataset.points_per_cloud() != model.points || dataset.features() != model.features) {
    throw ConfigError("dataset clouds are " + std::to_string(dataset.points_per_cloud()) + " x " +
                      std::to_string(dataset.features()) + ", model expects " + std::to_string(model.points) +
                      " x " + std::to_string(model.features));
  }
  if (dataset.num_classes != model.classes) {
    throw ConfigError("dataset has " + std::to_string(dataset.num_classes) + " classes, model has " +
                      std::to_string(model.classes));
  }
}

ModelConfig model_config_for(const RunConfig& run, const Dataset& dataset) {
  ModelConfig cfg = run.model;
  if (dataset.task != cfg.task) {
    throw ConfigError("dataset task " + to_string(dataset.task) + " does not match requested task " +
                      to_string(cfg.task));
  }
  cfg.points = dataset.points_per_cloud();
  cfg.features = dataset.features();
  cfg.classes = dataset.num_classes;
  try {
    ModelConfig strict = cfg;
    strict.free_form = false;
    strict.validate();
  } catch (const ConfigError&) {
    if (!cfg.free_form) log(LogLevel::kInfo, "dataset shape is not a reference setting; using free-form mode");
    cfg.free_form = true;
  }
  cfg.validate();
  return cfg;
}

template <typename Scalar>
std::vector<int> predict(PyramNet<Scalar>& model, const Dataset& dataset, std::size_t batch_size) {
  check_compatible(model.config(), dataset);
  NoGradGuard guard;
  std::mt19937_64 unused(0);
  std::vector<int> out;
  for (const auto& batch : batches<Scalar>(dataset, batch_size, false, 0)) {
    const auto labels = argmax_labels(model.logits(batch.points, false, unused));
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

template <typename Scalar>
MetricReport evaluate(PyramNet<Scalar>& model, const Dataset& dataset, std::size_t batch_size) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<int> pred = predict(model, dataset, batch_size);
  const std::vector<int> labels = dataset_labels(dataset);
  MetricReport report = compute_metrics(metric_inputs(dataset, pred, labels));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template <typename Scalar>
Trainer<Scalar>::Trainer(RunConfig config, Dataset train, std::optional<Dataset> test)
    : config_(std::move(config)), train_(std::move(train)), test_(std::move(test)), model_(config_.model) {
  config_.validate();
  check_compatible(config_.model, train_);
  if (test_) check_compatible(config_.model, *test_);
  for (const auto& p : model_.parameters()) {
    AdamState<Scalar> state;
    state.lr = config_.lr;
    state.beta1 = config_.beta1;
    state.beta2 = config_.beta2;
    state.epsilon = config_.adam_epsilon;
    (void)p;
    adam_.push_back(std::move(state));
  }
}

template <typename Scalar>
EpochRecord Trainer<Scalar>::train_epoch(int epoch) {
  const auto start = std::chrono::steady_clock::now();
  const Task task = config_.model.task;
  model_.set_bn_decay(config_.bn_decay.at(epoch));
  const AugmentConfig* augmentation = config_.augment.enabled ? &config_.augment : nullptr;
  auto epoch_batches = batches<Scalar>(train_, config_.batch_size, true, config_.seed, epoch, augmentation);

  std::vector<int> pred, labels;
  std::vector<std::size_t> order;
  double loss_sum = 0.0;
  std::size_t samples = 0, batch_index = 0;
  for (auto& batch : epoch_batches) {
    ++batch_index;
    const Index b = batch.points.dim(0);
    // Batch statistics need at least two rows; a lone trailing cloud is skipped.
    if (task == Task::kClassification && b < 2) continue;
    model_.zero_grad();
    std::mt19937_64 dropout_rng(derive_seed(config_.seed, 0x44524f50ULL, (static_cast<std::uint64_t>(epoch) << 20) + batch_index));
    const Tensor<Scalar> logits = model_.logits(batch.points, true, dropout_rng);
    const Tensor<Scalar> loss = cross_entropy_loss(logits, batch.labels, task);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index));
    }
    backward(loss);
    auto params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(params[i].tensor, adam_[i], params[i].name);

    loss_sum += value * static_cast<double>(b);
    samples += static_cast<std::size_t>(b);
    const auto batch_pred = argmax_labels(logits);
    pred.insert(pred.end(), batch_pred.begin(), batch_pred.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    order.insert(order.end(), batch.indices.begin(), batch.indices.end());
  }
  if (samples == 0) throw DataError("training split yields no usable batch");
  model_.zero_grad();

  EpochRecord record;
  record.epoch = epoch;
  record.loss = loss_sum / static_cast<double>(samples);
  MetricInputs in;
  in.pred = pred;
  in.labels = labels;
  in.task = task;
  in.num_classes = train_.num_classes;
  in.class_names = train_.class_names;
  if (task == Task::kPartSeg) {
    in.points_per_shape = train_.points_per_cloud();
    in.categories = train_.categories;
    for (std::size_t i : order) in.shape_categories.push_back(train_.clouds[i].cloud_label);
  }
  record.train = compute_metrics(in);
  record.train.epoch = epoch;
  record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  record.train.seconds = record.seconds;
  return record;
}

template <typename Scalar>
TrainResult Trainer<Scalar>::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  JsonLog log_file(config_.report);
  if (next_epoch_ == 0) {
    log_file.write({{"type", "start"}, {"config", config_.format()}});
  } else {
    log_file.write({{"type", "resume"}, {"epoch", next_epoch_}});
  }
  TrainResult result;
  for (int epoch = next_epoch_; epoch < config_.epochs; ++epoch) {
    EpochRecord record = train_epoch(epoch);
    const bool last = epoch + 1 == config_.epochs;
    next_epoch_ = epoch + 1;
    if (test_ && ((epoch + 1) % config_.eval_every == 0 || last)) {
      record.eval = evaluate(model_, *test_, config_.batch_size);
      record.eval->epoch = epoch;
      if (!result.best_eval || headline(*record.eval) > headline(*result.best_eval)) {
        result.best_eval = record.eval;
        result.best_epoch = epoch;
        if (!config_.checkpoint.empty()) checkpoint().save(config_.checkpoint + ".best");
      }
      result.final_eval = record.eval;
    }
    if (!config_.checkpoint.empty() && ((epoch + 1) % config_.checkpoint_every == 0 || last)) {
      checkpoint().save(config_.checkpoint);
    }
    nlohmann::json line{{"type", "epoch"},
                        {"epoch", epoch},
                        {"loss", record.loss},
                        {"seconds", record.seconds},
                        {"bn_decay", config_.bn_decay.at(epoch)},
                        {"train", to_json(record.train)}};
    if (record.eval) line["eval"] = to_json(*record.eval);
    log_file.write(line);
    if (on_epoch) on_epoch(record);
    result.epochs.push_back(std::move(record));
  }
  result.final_train = evaluate(model_, train_, config_.batch_size);
  result.final_train.epoch = next_epoch_ - 1;
  nlohmann::json final_line{{"type", "final"}, {"train", to_json(result.final_train)}};
  if (result.final_eval) final_line["eval"] = to_json(*result.final_eval);
  if (result.best_eval) {
    final_line["best_eval"] = to_json(*result.best_eval);
    final_line["best_epoch"] = result.best_epoch;
  }
  log_file.write(final_line);
  return result;
}

template <typename Scalar>
Checkpoint Trainer<Scalar>::checkpoint() const {
  auto& model = const_cast<PyramNet<Scalar>&>(model_);
  Checkpoint ck = model_checkpoint(model);
  ck.put_int("__state__/next_epoch", next_epoch_);
  ck.put_int("__state__/seed", static_cast<std::int64_t>(config_.seed));
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& state = adam_[i];
    const Shape shape = params[i].tensor.shape();
    const Index n = params[i].tensor.size();
    const std::string prefix = "__adam__/" + params[i].name;
    ck.put_array<Scalar>(prefix + "/m", shape, state.m.size() == n ? state.m : Array<Scalar>::Zero(n));
    ck.put_array<Scalar>(prefix + "/v", shape, state.v.size() == n ? state.v : Array<Scalar>::Zero(n));
    ck.put_int(prefix + "/t", state.t);
  }
  return ck;
}

template <typename Scalar>
void Trainer<Scalar>::resume(const Checkpoint& ck) {
  const ModelConfig saved = ModelConfig::parse(ck.text(Checkpoint::kConfigRecord));
  if (!(saved == model_.config())) throw LoadError("checkpoint was written for a different model configuration");
  load_model_state(model_, ck);
  const auto params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string prefix = "__adam__/" + params[i].name;
    adam_[i].m = ck.array<Scalar>(prefix + "/m", params[i].tensor.shape());
    adam_[i].v = ck.array<Scalar>(prefix + "/v", params[i].tensor.shape());
    adam_[i].t = ck.integer(prefix + "/t");
  }
  next_epoch_ = static_cast<int>(ck.integer("__state__/next_epoch"));
}

template <typename Scalar>
std::vector<SweepRow> sweep_k(const RunConfig& config, const Dataset& train, const Dataset& test,
                              const std::vector<KRule>& rules) {
  if (config.model.task != Task::kClassification) throw ConfigError("sweep-k needs the classification task");
  if (rules.empty()) throw ConfigError("sweep-k needs at least one k value");
  std::vector<SweepRow> rows;
  for (const KRule& rule : rules) {
    RunConfig run = config;
    run.model.k_rule = rule;
    run.checkpoint.clear();
    run.model.validate();
    Trainer<Scalar> trainer(run, train, test);
    const TrainResult result = trainer.run();
    SweepRow row;
    row.k = rule.to_string();
    row.gem1_k = clamp_k(choose_k(run.model.stem_width, rule), run.model.points);
    row.gem2_k = clamp_k(choose_k(run.model.concat_width(), rule), run.model.points);
    row.train_accuracy = result.final_train.overall_accuracy;
    row.overall_accuracy = result.final_eval ? result.final_eval->overall_accuracy : NAN;
    rows.push_back(row);
  }
  return rows;
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s  %6s  %6s  %9s  %9s\n", "k", "gem1_k", "gem2_k", "train_acc", "test_acc");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s  %6lld  %6lld  %9.4f  %9.4f\n", r.k.c_str(), static_cast<long long>(r.gem1_k),
                  static_cast<long long>(r.gem2_k), r.train_accuracy, r.overall_accuracy);
    out << line;
  }
  return out.str();
}

ExportMode parse_export_mode(const std::string& text) {
  if (text == "pred" || text == "prediction") return ExportMode::kPrediction;
  if (text == "gt" || text == "truth") return ExportMode::kGroundTruth;
  if (text == "diff" || text == "difference") return ExportMode::kDifference;
  throw ConfigError("unknown export mode '" + text + "' (expected pred, gt or diff)");
}

std::array<double, 3> palette_color(int label) {
  if (label < 0) throw DataError("palette: negative label " + std::to_string(label));
  // Golden-ratio hue steps give well separated, fixed colors per label.
  const double hue = std::fmod(0.07 + 0.618033988749895 * label, 1.0) * 6.0;
  const double s = 0.7, v = 0.9;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0:
      return {v, t, p};
    case 1:
      return {q, v, p};
    case 2:
      return {p, v, t};
    case 3:
      return {p, q, v};
    case 4:
      return {t, p, v};
    default:
      return {v, p, q};
  }
}

void write_colored_obj(std::ostream& out, const RowMatrix<float>& points, std::span<const int> pred,
                       std::span<const int> truth, ExportMode mode) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (mode != ExportMode::kGroundTruth && pred.size() != n) {
    throw DimensionError("export: " + std::to_string(pred.size()) + " predictions for " + std::to_string(n) + " points");
  }
  if (mode != ExportMode::kPrediction && truth.size() != n) {
    throw DataError("export: ground-truth labels required (" + std::to_string(truth.size()) + " for " +
                    std::to_string(n) + " points)");
  }
  char line[160];
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 3> rgb{};
    switch (mode) {
      case ExportMode::kPrediction:
        rgb = palette_color(pred[i]);
        break;
      case ExportMode::kGroundTruth:
        rgb = palette_color(truth[i]);
        break;
      case ExportMode::kDifference:
        rgb = pred[i] == truth[i] ? kAgreementColor : kDifferenceColor;
        break;
    }
    const auto r = static_cast<Index>(i);
    std::snprintf(line, sizeof line, "v %.6f %.6f %.6f %.4f %.4f %.4f\n", points(r, 0), points(r, 1), points(r, 2),
                  rgb[0], rgb[1], rgb[2]);
    out << line;
  }
}

PointCloud mesh_to_cloud(const std::string& path, Index points, std::uint64_t seed) {
  std::string ext = std::filesystem::path(path).extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const TriangleMesh mesh = load_mesh(path, parse_mesh_format(ext));
  return normalize_unit_sphere(sample_surface(mesh, points, seed));
}

#define PYRAMNET_INSTANTIATE(S)                                                                               \
  template MetricReport evaluate(PyramNet<S>&, const Dataset&, std::size_t);                                  \
  template std::vector<int> predict(PyramNet<S>&, const Dataset&, std::size_t);                               \
  template class Trainer<S>;                                                                                  \
  template std::vector<SweepRow> sweep_k<S>(const RunConfig&, const Dataset&, const Dataset&,                 \
                                            const std::vector<KRule>&);
PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
