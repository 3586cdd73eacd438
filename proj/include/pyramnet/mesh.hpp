#pragma once

#include "pyramnet/pointcloud.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace pyramnet {

enum class MeshFormat { kOff, kObj };

MeshFormat parse_mesh_format(const std::string& text);

/// Triangle soup with indexed vertices. Faces never reference a missing vertex.
struct TriangleMesh {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> vertices;
  Eigen::Matrix<Index, Eigen::Dynamic, 3, Eigen::RowMajor> faces;
  std::size_t dropped_faces = 0;  // degenerate triangles removed while loading

  Index vertex_count() const { return vertices.rows(); }
  Index face_count() const { return faces.rows(); }
  double face_area(Index face) const;
};

/// Triangles with area <= this are discarded at load time.
inline constexpr double kDegenerateArea = 1e-12;

/// Parses OFF or OBJ text; polygons are fan-triangulated. `name` appears in
/// ParseError messages alongside the line number.
TriangleMesh parse_mesh(const std::string& text, MeshFormat format, const std::string& name = "<mesh>");
TriangleMesh load_mesh(const std::string& path, MeshFormat format);

/// Area-weighted face choice, then a uniform point in the triangle via
/// square-root barycentric sampling. Optionally reports the face of each point.
PointCloud sample_surface(const TriangleMesh& mesh, Index count, std::uint64_t seed,
                          std::vector<Index>* face_ids = nullptr);

}  // namespace pyramnet
