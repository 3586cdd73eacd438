#pragma once

#include "pyramnet/pointcloud.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pyramnet {

/// Shape names accepted for synthetic classification sets.
const std::vector<std::string>& synthetic_classification_shapes();
/// Two-part categories for synthetic part segmentation (part 0 body, part 1 cap).
const std::vector<std::string>& synthetic_part_categories();

/// Surface samples of one analytic shape, randomly posed and proportioned,
/// scaled so the farthest point lies at radius 1. A sphere is exactly the unit sphere.
PointCloud synthetic_shape(const std::string& shape, Index points, std::mt19937_64& rng);

/// Two-part shape whose body lies at y <= 0 and cap at y > 0, rotated only
/// about y, so part labels equal (y > 0).
PointCloud synthetic_part_shape(const std::string& category, Index points, std::mt19937_64& rng);

/// `per_class` clouds of each named class (classification) or category (part
/// segmentation), in class-major order. Throws ConfigError for unknown names.
Dataset make_synthetic(Task task, const std::vector<std::string>& classes, Index per_class,
                       Index points, std::uint64_t seed);

}  // namespace pyramnet
