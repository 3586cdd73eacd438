#pragma once

#include "pyramnet/pointcloud.hpp"

#include <span>
#include <string>
#include <vector>

namespace pyramnet {

struct ClassMetrics {
  std::string name;
  double recall = 0.0;  // 1 when the class has no support
  double iou = 0.0;     // 1 when the class is neither present nor predicted
  Index support = 0;
};

struct MetricReport {
  Task task = Task::kClassification;
  std::vector<ClassMetrics> classes;  // one row per class, always P rows
  double overall_accuracy = 0.0;
  double avg_class_accuracy = 0.0;    // mean recall over classes with support
  double miou = 0.0;
  int epoch = -1;
  double seconds = 0.0;

  /// Aligned human-readable table.
  std::string to_text() const;
};

/// Inputs to compute_metrics. For segmentation `pred` and `labels` hold
/// `points_per_shape` entries per shape, shapes back to back.
struct MetricInputs {
  std::span<const int> pred;
  std::span<const int> labels;
  Task task = Task::kClassification;
  int num_classes = 0;
  std::vector<std::string> class_names;  // optional; defaults to "class<i>"
  // Part segmentation: category of each shape and the parts per category.
  // Without categories every shape is scored over all P parts.
  Index points_per_shape = 0;
  std::vector<int> shape_categories;
  std::vector<PartCategory> categories;
};

/// Overall accuracy, mean class recall, and mIoU (per-shape part mIoU for
/// part segmentation, mean global per-class IoU otherwise).
/// Throws DataError on empty input and DimensionError on size mismatches.
MetricReport compute_metrics(const MetricInputs& in);

}  // namespace pyramnet
