#include "pyramnet/pointcloud.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/init.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace pyramnet {

std::string to_string(Task task) {
  switch (task) {
    case Task::kClassification:
      return "classification";
    case Task::kPartSeg:
      return "part_seg";
    case Task::kSceneSeg:
      return "scene_seg";
  }
  return "unknown";
}

Task parse_task(const std::string& text) {
  if (text == "classification" || text == "cls") return Task::kClassification;
  if (text == "part_seg" || text == "partseg") return Task::kPartSeg;
  if (text == "scene_seg" || text == "semseg") return Task::kSceneSeg;
  throw ConfigError("unknown task '" + text + "' (expected classification, part_seg or scene_seg)");
}

Index Dataset::points_per_cloud() const {
  if (clouds.empty()) throw DataError("dataset '" + split + "' is empty");
  const Index n = clouds.front().size();
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].size() != n) {
      throw DataError("cloud " + std::to_string(i) + " has " + std::to_string(clouds[i].size()) +
                      " points, expected " + std::to_string(n));
    }
  }
  return n;
}

Index Dataset::features() const {
  if (clouds.empty()) throw DataError("dataset '" + split + "' is empty");
  return clouds.front().features();
}

void Dataset::validate() const {
  if (num_classes < 1) throw DataError("dataset needs at least one class");
  const Index f = features();
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto& c = clouds[i];
    const std::string where = "cloud " + std::to_string(i) + ": ";
    if (c.size() < 1) throw DataError(where + "no points");
    if (c.features() < 3) throw DataError(where + "needs at least 3 features");
    if (c.features() != f) throw DataError(where + "feature count differs from the first cloud");
    if (task == Task::kClassification) {
      if (c.cloud_label < 0 || c.cloud_label >= num_classes) {
        throw DataError(where + "class label " + std::to_string(c.cloud_label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      }
    } else {
      if (static_cast<Index>(c.point_labels.size()) != c.size()) {
        throw DataError(where + "segmentation needs one label per point");
      }
      for (int l : c.point_labels) {
        if (l < 0 || l >= num_classes) {
          throw DataError(where + "point label " + std::to_string(l) + " outside [0, " +
                          std::to_string(num_classes) + ")");
        }
      }
    }
  }
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.size() < 1 || cloud.features() < 3) {
    throw DataError("normalize_unit_sphere: need N >= 1 points with xyz");
  }
  const Eigen::MatrixXd xyz = cloud.points.leftCols(3).cast<double>();
  const Eigen::RowVector3d centroid = xyz.colwise().mean();
  const Eigen::MatrixXd centered = xyz.rowwise() - centroid;
  const double radius = centered.rowwise().norm().maxCoeff();
  if (!(radius > 0.0)) throw DataError("normalize_unit_sphere: all points coincide");
  PointCloud out = cloud;
  out.points.leftCols(3) = (centered / radius).cast<float>();
  return out;
}

PointCloud rotate_about_up(const PointCloud& cloud, double angle) {
  PointCloud out = cloud;
  const double c = std::cos(angle), s = std::sin(angle);
  for (Index i = 0; i < cloud.size(); ++i) {
    const double x = cloud.points(i, 0), z = cloud.points(i, 2);
    out.points(i, 0) = static_cast<float>(c * x + s * z);
    out.points(i, 2) = static_cast<float>(-s * x + c * z);
  }
  return out;
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentConfig& config) {
  if (cloud.features() < 3) throw DataError("augment: need xyz columns");
  if (!config.enabled) return cloud;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  PointCloud out = config.rotate ? rotate_about_up(cloud, angle(rng)) : cloud;
  if (config.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.jitter_sigma);
    for (Index i = 0; i < out.size(); ++i) {
      for (Index d = 0; d < 3; ++d) {
        const double j = std::clamp(noise(rng), -config.jitter_clip, config.jitter_clip);
        out.points(i, d) = static_cast<float>(out.points(i, d) + j);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> plan_batches(std::size_t count, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with explicit draws so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = count; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

template <typename Scalar>
Batch<Scalar> assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             const AugmentConfig* augmentation, std::uint64_t seed, int epoch) {
  const Index n = dataset.points_per_cloud();
  const Index f = dataset.features();
  const auto b = static_cast<Index>(indices.size());
  Batch<Scalar> batch;
  batch.indices = indices;
  Array<Scalar> values(b * n * f);
  for (Index s = 0; s < b; ++s) {
    const std::size_t idx = indices[static_cast<std::size_t>(s)];
    const PointCloud& source = dataset.clouds.at(idx);
    if (source.features() != f) throw DataError("cloud " + std::to_string(idx) + " has mixed F");
    const PointCloud cloud =
        augmentation ? augment(source, derive_seed(seed, idx, static_cast<std::uint64_t>(epoch)), *augmentation)
                     : source;
    MatrixMap<Scalar>(values.data() + s * n * f, n, f) = cloud.points.cast<Scalar>();
    batch.cloud_labels.push_back(cloud.cloud_label);
    if (dataset.task == Task::kClassification) {
      batch.labels.push_back(cloud.cloud_label);
    } else {
      batch.labels.insert(batch.labels.end(), cloud.point_labels.begin(), cloud.point_labels.end());
    }
  }
  batch.points = Tensor<Scalar>({b, n, f}, std::move(values));
  return batch;
}

template <typename Scalar>
std::vector<Batch<Scalar>> batches(const Dataset& dataset, std::size_t batch_size, bool shuffle,
                                   std::uint64_t seed, int epoch, const AugmentConfig* augmentation) {
  dataset.points_per_cloud();
  std::vector<Batch<Scalar>> out;
  for (const auto& indices : plan_batches(dataset.clouds.size(), batch_size, shuffle, seed, epoch)) {
    out.push_back(assemble_batch<Scalar>(dataset, indices, augmentation, seed, epoch));
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, std::uint64_t seed) {
  Dataset train = dataset, test = dataset;
  train.clouds.clear();
  test.clouds.clear();
  train.split = "train";
  test.split = "test";
  for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
    const bool held_out = derive_seed(seed, 0x53504c4954ULL, i) % 5 == 0;
    (held_out ? test : train).clouds.push_back(dataset.clouds[i]);
  }
  return {std::move(train), std::move(test)};
}

#define PYRAMNET_INSTANTIATE(S)                                                                     \
  template Batch<S> assemble_batch<S>(const Dataset&, const std::vector<std::size_t>&,              \
                                      const AugmentConfig*, std::uint64_t, int);                    \
  template std::vector<Batch<S>> batches<S>(const Dataset&, std::size_t, bool, std::uint64_t, int, \
                                            const AugmentConfig*);

PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
