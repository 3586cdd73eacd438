#include "pyramnet/synthetic.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/init.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pyramnet {

namespace {

using Vec3 = Eigen::Vector3d;
constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Eigen::Matrix3d rotation_about_y(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

// Picks an index with probability proportional to `weights`.
std::size_t pick(std::mt19937_64& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double r = uniform(rng, 0.0, total);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (r < weights[i]) return i;
    r -= weights[i];
  }
  return weights.size() - 1;
}

Vec3 disk_point(std::mt19937_64& rng, double radius, double y) {
  const double rho = radius * std::sqrt(uniform(rng, 0.0, 1.0));
  const double t = uniform(rng, 0.0, 2.0 * kPi);
  return {rho * std::cos(t), y, rho * std::sin(t)};
}

Vec3 tube_point(std::mt19937_64& rng, double radius, double y_lo, double y_hi) {
  const double t = uniform(rng, 0.0, 2.0 * kPi);
  return {radius * std::cos(t), uniform(rng, y_lo, y_hi), radius * std::sin(t)};
}

// Upper hemisphere of a sphere centered at (0, center_y, 0), strictly above center_y.
Vec3 dome_point(std::mt19937_64& rng, double radius, double center_y) {
  Vec3 n;
  do {
    n = unit_vector(rng);
    n.y() = std::abs(n.y());
  } while (radius * n.y() < 1e-5);
  return Vec3(0.0, center_y, 0.0) + radius * n;
}

Vec3 sample_shape(const std::string& shape, std::mt19937_64& rng, const std::vector<double>& params) {
  if (shape == "sphere") return unit_vector(rng);
  if (shape == "cube") {
    const int face = static_cast<int>(pick(rng, {1, 1, 1, 1, 1, 1}));
    Vec3 p(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    p[face / 2] = face % 2 == 0 ? -1.0 : 1.0;
    return p;
  }
  if (shape == "cylinder") {
    const double r = params[0], h = params[1];
    switch (pick(rng, {2.0 * kPi * r * 2.0 * h, kPi * r * r, kPi * r * r})) {
      case 0:
        return tube_point(rng, r, -h, h);
      case 1:
        return disk_point(rng, r, -h);
      default:
        return disk_point(rng, r, h);
    }
  }
  // torus: major radius 1, minor params[0]; rejection keeps the area measure uniform.
  const double minor = params[0];
  while (true) {
    const double theta = uniform(rng, 0.0, 2.0 * kPi);
    const double phi = uniform(rng, 0.0, 2.0 * kPi);
    const double ring = 1.0 + minor * std::cos(theta);
    if (uniform(rng, 0.0, 1.0 + minor) <= ring) {
      return {ring * std::cos(phi), minor * std::sin(theta), ring * std::sin(phi)};
    }
  }
}

PointCloud to_cloud(const std::vector<Vec3>& points) {
  double radius = 0.0;
  for (const auto& p : points) radius = std::max(radius, p.norm());
  PointCloud cloud;
  cloud.points.resize(static_cast<Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    cloud.points.row(static_cast<Index>(i)) = (points[i] / radius).transpose().cast<float>();
  }
  return cloud;
}

}  // namespace

const std::vector<std::string>& synthetic_classification_shapes() {
  static const std::vector<std::string> shapes{"sphere", "cube", "cylinder", "torus"};
  return shapes;
}

const std::vector<std::string>& synthetic_part_categories() {
  static const std::vector<std::string> categories{"capsule", "mushroom"};
  return categories;
}

PointCloud synthetic_shape(const std::string& shape, Index points, std::mt19937_64& rng) {
  const auto& known = synthetic_classification_shapes();
  if (std::find(known.begin(), known.end(), shape) == known.end()) {
    throw ConfigError("unknown synthetic shape '" + shape + "'");
  }
  std::vector<double> params;
  if (shape == "cylinder") params = {uniform(rng, 0.4, 1.0), uniform(rng, 0.5, 1.0)};
  if (shape == "torus") params = {uniform(rng, 0.2, 0.45)};
  // Upright with a random heading, like aligned mesh benchmarks.
  const Eigen::Matrix3d pose =
      shape == "sphere" ? Eigen::Matrix3d::Identity() : rotation_about_y(uniform(rng, 0.0, 2.0 * kPi));
  std::vector<Vec3> samples;
  samples.reserve(static_cast<std::size_t>(points));
  for (Index i = 0; i < points; ++i) samples.push_back(pose * sample_shape(shape, rng, params));
  if (shape == "sphere") {
    // Already on the unit sphere; skip the rescale so radii stay exact.
    PointCloud cloud;
    cloud.points.resize(points, 3);
    for (Index i = 0; i < points; ++i) cloud.points.row(i) = samples[static_cast<std::size_t>(i)].transpose().cast<float>();
    return cloud;
  }
  return to_cloud(samples);
}

PointCloud synthetic_part_shape(const std::string& category, Index points, std::mt19937_64& rng) {
  std::vector<Vec3> samples;
  samples.reserve(static_cast<std::size_t>(points));
  if (category == "capsule") {
    const double r = uniform(rng, 0.3, 0.5), h = uniform(rng, 0.8, 1.4);
    const std::vector<double> areas{2.0 * kPi * r * h, kPi * r * r, 2.0 * kPi * r * r};
    for (Index i = 0; i < points; ++i) {
      switch (pick(rng, areas)) {
        case 0:
          samples.push_back(tube_point(rng, r, -h, 0.0));
          break;
        case 1:
          samples.push_back(disk_point(rng, r, -h));
          break;
        default:
          samples.push_back(dome_point(rng, r, 0.0));
      }
    }
  } else if (category == "mushroom") {
    const double stem = uniform(rng, 0.12, 0.22), h = uniform(rng, 0.6, 1.0);
    const double cap = uniform(rng, 0.45, 0.7), lift = 0.05;
    const std::vector<double> areas{2.0 * kPi * stem * h, kPi * stem * stem, 2.0 * kPi * cap * cap,
                                    kPi * cap * cap};
    for (Index i = 0; i < points; ++i) {
      switch (pick(rng, areas)) {
        case 0:
          samples.push_back(tube_point(rng, stem, -h, 0.0));
          break;
        case 1:
          samples.push_back(disk_point(rng, stem, -h));
          break;
        case 2:
          samples.push_back(dome_point(rng, cap, lift));
          break;
        default:
          samples.push_back(disk_point(rng, cap, lift));
      }
    }
  } else {
    throw ConfigError("unknown synthetic part category '" + category + "'");
  }
  const Eigen::Matrix3d pose = rotation_about_y(uniform(rng, 0.0, 2.0 * kPi));
  for (auto& p : samples) p = pose * p;
  PointCloud cloud = to_cloud(samples);
  cloud.point_labels.resize(static_cast<std::size_t>(points));
  for (Index i = 0; i < points; ++i) cloud.point_labels[static_cast<std::size_t>(i)] = cloud.points(i, 1) > 0.0f ? 1 : 0;
  return cloud;
}

Dataset make_synthetic(Task task, const std::vector<std::string>& classes, Index per_class,
                       Index points, std::uint64_t seed) {
  if (task == Task::kSceneSeg) throw ConfigError("synthetic data supports classification and part_seg only");
  if (classes.empty()) throw ConfigError("make_synthetic: no classes requested");
  if (per_class < 1 || points < 1) throw ConfigError("make_synthetic: per_class and points must be >= 1");
  Dataset dataset;
  dataset.task = task;
  dataset.seed = seed;
  dataset.split = "all";
  if (task == Task::kClassification) {
    dataset.class_names = classes;
    dataset.num_classes = static_cast<int>(classes.size());
  } else {
    dataset.class_names = {"body", "cap"};
    dataset.num_classes = 2;
    for (const auto& c : classes) dataset.categories.push_back({c, {0, 1}});
  }
  std::uint64_t index = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (Index i = 0; i < per_class; ++i, ++index) {
      std::mt19937_64 rng(derive_seed(seed, index, 0x53594e5448ULL));
      PointCloud cloud = task == Task::kClassification ? synthetic_shape(classes[c], points, rng)
                                                       : synthetic_part_shape(classes[c], points, rng);
      cloud.cloud_label = static_cast<int>(c);
      dataset.clouds.push_back(std::move(cloud));
    }
  }
  return dataset;
}

}  // namespace pyramnet
