#pragma once

// On-disk dataset layout:
//   <root>/manifest.tsv      one "class_id<TAB>name" line per class
//   <root>/categories.tsv    part segmentation only: "id<TAB>name<TAB>p0,p1,..."
//   <root>/<split>/*.pcld    one binary record per cloud
//
// PCLD record (little-endian): "PCLD", u32 N, u32 F, u32 task, i32 cloud label
// (-1 if none), u32 has point labels, f32[N*F] row-major points, i32[N] labels.

#include "pyramnet/pointcloud.hpp"

#include <istream>
#include <ostream>
#include <string>

namespace pyramnet {

void write_pcld(std::ostream& out, const PointCloud& cloud, Task task);
PointCloud read_pcld(std::istream& in, Task* task = nullptr, const std::string& name = "<pcld>");
void save_pcld(const std::string& path, const PointCloud& cloud, Task task);
PointCloud load_pcld(const std::string& path, Task* task = nullptr);

/// Writes the manifest (and categories) plus every cloud under <root>/<dataset.split>.
void save_dataset(const Dataset& dataset, const std::string& root);
/// Reads <root>/<split>; clouds are loaded in file-name order.
Dataset load_dataset(const std::string& root, const std::string& split);

struct TxtColumns {
  Index features = 3;      // leading columns kept as point attributes
  bool label_last = false;  // trailing column holds an integer point label
};

/// Whitespace- or comma-separated rows, one point per line.
PointCloud load_txt_cloud(const std::string& path, const TxtColumns& columns);

}  // namespace pyramnet
