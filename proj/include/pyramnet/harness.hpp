#pragma once

#include "pyramnet/checkpoint.hpp"
#include "pyramnet/metrics.hpp"
#include "pyramnet/model.hpp"
#include "pyramnet/optim.hpp"
#include "pyramnet/pointcloud.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pyramnet {

struct RunConfig {
  std::string command = "train";
  ModelConfig model = ModelConfig::reference(Task::kClassification);
  std::string data_root;
  std::string train_split = "train";
  std::string test_split = "test";
  int epochs = 300;
  std::size_t batch_size = 32;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  BnDecaySchedule bn_decay;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string report;  // JSON-lines log path
  int eval_every = 5;
  int checkpoint_every = 10;
  AugmentConfig augment;
  bool f64 = false;

  /// Flat key=value dump of every setting (model keys prefixed with "model.").
  std::string format() const;
  void validate() const;
};

/// One metric record as a JSON object.
nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

/// Append-only JSON-lines writer. A trailing partial line left by an
/// interrupted run is terminated before the first new record.
class JsonLog {
 public:
  JsonLog() = default;
  explicit JsonLog(std::string path);
  bool enabled() const { return !path_.empty(); }
  void write(const nlohmann::json& record);

 private:
  std::string path_;
};

/// Every well-formed record of a JSON-lines file; malformed or truncated lines are skipped.
std::vector<nlohmann::json> read_json_lines(const std::string& path, std::size_t* skipped = nullptr);

/// Human-readable summary of a training log: final and best evaluation.
std::string summarize_log(const std::vector<nlohmann::json>& records);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  MetricReport train;  // from training-mode predictions during the epoch
  std::optional<MetricReport> eval;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  MetricReport final_train;  // inference mode over the un-augmented training split
  std::optional<MetricReport> final_eval;
  std::optional<MetricReport> best_eval;
  int best_epoch = -1;
};

/// Metrics of `model` over a dataset in inference mode, no augmentation.
template <typename Scalar>
MetricReport evaluate(PyramNet<Scalar>& model, const Dataset& dataset, std::size_t batch_size);

/// Inference-mode predictions: one label per cloud, or N labels per cloud.
template <typename Scalar>
std::vector<int> predict(PyramNet<Scalar>& model, const Dataset& dataset, std::size_t batch_size);

/// Throws ConfigError when the dataset cannot feed the model (task, N, F or P differ).
void check_compatible(const ModelConfig& model, const Dataset& dataset);

/// Model settings for a dataset: task, N, F and P from the data; free-form
/// mode is switched on when they are not a reference setting.
ModelConfig model_config_for(const RunConfig& run, const Dataset& dataset);

template <typename Scalar>
class Trainer {
 public:
  Trainer(RunConfig config, Dataset train, std::optional<Dataset> test = std::nullopt);

  /// Trains for the remaining epochs, logging and checkpointing as configured.
  /// `on_epoch` sees every finished epoch.
  TrainResult run(const std::function<void(const EpochRecord&)>& on_epoch = {});
  EpochRecord train_epoch(int epoch);

  PyramNet<Scalar>& model() { return model_; }
  const RunConfig& config() const { return config_; }
  int next_epoch() const { return next_epoch_; }

  /// Model state plus Adam moments and the epoch counter.
  Checkpoint checkpoint() const;
  /// Restores a checkpoint written by checkpoint(); training continues after its epoch.
  void resume(const Checkpoint& checkpoint);

 private:
  RunConfig config_;
  Dataset train_;
  std::optional<Dataset> test_;
  PyramNet<Scalar> model_;
  std::vector<AdamState<Scalar>> adam_;
  int next_epoch_ = 0;
};

struct SweepRow {
  std::string k;  // "ceil_f_over_4" or the fixed value
  Index gem1_k = 0;
  Index gem2_k = 0;
  double train_accuracy = 0.0;
  double overall_accuracy = 0.0;  // held-out
};

/// Trains one classification model per k rule with shared seed and data.
template <typename Scalar>
std::vector<SweepRow> sweep_k(const RunConfig& config, const Dataset& train, const Dataset& test,
                              const std::vector<KRule>& rules);
std::string format_sweep(const std::vector<SweepRow>& rows);

enum class ExportMode { kPrediction, kGroundTruth, kDifference };
ExportMode parse_export_mode(const std::string& text);

/// Fixed palette entry for a label (RGB in [0, 1]).
std::array<double, 3> palette_color(int label);
inline constexpr std::array<double, 3> kDifferenceColor{1.0, 0.0, 0.0};
inline constexpr std::array<double, 3> kAgreementColor{0.75, 0.75, 0.75};

/// One "v x y z r g b" line per point.
void write_colored_obj(std::ostream& out, const RowMatrix<float>& points, std::span<const int> pred,
                       std::span<const int> truth, ExportMode mode);

/// Area-sampled point cloud from a mesh file, normalized to the unit sphere.
PointCloud mesh_to_cloud(const std::string& path, Index points, std::uint64_t seed);

}  // namespace pyramnet
