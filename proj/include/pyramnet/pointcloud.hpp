#pragma once

#include "pyramnet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pyramnet {

enum class Task { kClassification, kPartSeg, kSceneSeg };

std::string to_string(Task task);
Task parse_task(const std::string& text);
inline bool is_segmentation(Task task) { return task != Task::kClassification; }

/// N x F point attributes; columns 0..2 are xyz.
struct PointCloud {
  RowMatrix<float> points;
  int cloud_label = -1;          // class id (classification) or category id (part seg)
  std::vector<int> point_labels;  // per-point ids for segmentation, else empty

  Index size() const { return points.rows(); }
  Index features() const { return points.cols(); }
  bool has_point_labels() const { return !point_labels.empty(); }
};

/// Part-segmentation category: the part ids a shape of this category may carry.
struct PartCategory {
  std::string name;
  std::vector<int> parts;
};

struct Dataset {
  std::vector<PointCloud> clouds;
  Task task = Task::kClassification;
  int num_classes = 0;
  std::vector<std::string> class_names;   // size num_classes
  std::vector<PartCategory> categories;   // part seg only
  std::string split = "train";
  std::uint64_t seed = 0;

  /// Throws DataError unless every cloud shares F, has N >= 1, F >= 3, and
  /// carries task-appropriate labels below num_classes.
  void validate() const;
  Index points_per_cloud() const;  // common N, or throws DataError when mixed
  Index features() const;
};

/// Centers xyz at the centroid and scales by the largest xyz norm; other columns untouched.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct AugmentConfig {
  bool enabled = true;
  bool rotate = true;           // uniform angle about the vertical (y) axis
  double jitter_sigma = 0.01;   // per-coordinate Gaussian noise on xyz
  double jitter_clip = 0.05;
};

PointCloud rotate_about_up(const PointCloud& cloud, double angle);
PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentConfig& config = {});

/// One mini-batch: points[B, N, F], one label per cloud (classification) or
/// B*N point labels (segmentation), plus each cloud's cloud_label.
template <typename Scalar>
struct Batch {
  Tensor<Scalar> points;
  std::vector<int> labels;
  std::vector<int> cloud_labels;
  std::vector<std::size_t> indices;
};

/// Cloud order for one epoch: deterministic per (seed, epoch) when shuffling;
/// the last batch may be short.
std::vector<std::vector<std::size_t>> plan_batches(std::size_t count, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed, int epoch);

/// Assembles the clouds at `indices`, applying augmentation when `augmentation`
/// is given (per-cloud seeds derived from seed, cloud index and epoch).
template <typename Scalar>
Batch<Scalar> assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             const AugmentConfig* augmentation, std::uint64_t seed, int epoch);

/// All batches of one epoch. Throws DataError when clouds have mixed N or F.
template <typename Scalar>
std::vector<Batch<Scalar>> batches(const Dataset& dataset, std::size_t batch_size, bool shuffle,
                                   std::uint64_t seed, int epoch = 0,
                                   const AugmentConfig* augmentation = nullptr);

/// Deterministic 80/20 split by hashed cloud index: {train, test}.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, std::uint64_t seed);

}  // namespace pyramnet
