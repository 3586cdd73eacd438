#include "pyramnet/mesh.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/log.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace pyramnet {

MeshFormat parse_mesh_format(const std::string& text) {
  if (text == "off" || text == "OFF") return MeshFormat::kOff;
  if (text == "obj" || text == "OBJ") return MeshFormat::kObj;
  throw ConfigError("unknown mesh format '" + text + "' (expected off or obj)");
}

double TriangleMesh::face_area(Index face) const {
  const Eigen::Vector3d a = vertices.row(faces(face, 0)).transpose();
  const Eigen::Vector3d b = vertices.row(faces(face, 1)).transpose();
  const Eigen::Vector3d c = vertices.row(faces(face, 2)).transpose();
  return 0.5 * (b - a).cross(c - a).norm();
}

namespace {

struct RawFace {
  std::vector<long long> corners;  // zero-based after resolution
  std::size_t line = 0;
};

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string t;
  while (in >> t) tokens.push_back(t);
  return tokens;
}

double parse_double(const std::string& token, const std::string& name, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size() || !std::isfinite(v)) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw ParseError(name, line, "expected a number, got '" + token + "'");
  }
}

long long parse_int(const std::string& token, const std::string& name, std::size_t line) {
  long long v = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(name, line, "expected an integer, got '" + token + "'");
  }
  return v;
}

TriangleMesh build_mesh(const std::vector<Eigen::Vector3d>& vertices, const std::vector<RawFace>& faces,
                        const std::string& name) {
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Index>(vertices.size()), 3);
  for (std::size_t i = 0; i < vertices.size(); ++i) mesh.vertices.row(static_cast<Index>(i)) = vertices[i];
  std::vector<std::array<Index, 3>> triangles;
  const auto v = static_cast<long long>(vertices.size());
  for (const RawFace& f : faces) {
    if (f.corners.size() < 3) throw ParseError(name, f.line, "face needs at least 3 vertices");
    for (long long c : f.corners) {
      if (c < 0 || c >= v) {
        throw ParseError(name, f.line, "vertex index " + std::to_string(c) + " outside [0, " +
                                           std::to_string(v) + ")");
      }
    }
    for (std::size_t i = 1; i + 1 < f.corners.size(); ++i) {
      triangles.push_back({static_cast<Index>(f.corners[0]), static_cast<Index>(f.corners[i]),
                           static_cast<Index>(f.corners[i + 1])});
    }
  }
  mesh.faces.resize(static_cast<Index>(triangles.size()), 3);
  Index kept = 0;
  for (const auto& t : triangles) {
    mesh.faces.row(kept) << t[0], t[1], t[2];
    if (mesh.face_area(kept) > kDegenerateArea) {
      ++kept;
    } else {
      ++mesh.dropped_faces;
    }
  }
  mesh.faces.conservativeResize(kept, 3);
  if (mesh.dropped_faces > 0) {
    log(LogLevel::kWarning, name + ": dropped " + std::to_string(mesh.dropped_faces) + " degenerate face(s)");
  }
  return mesh;
}

TriangleMesh parse_off(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  // Significant tokens with their line numbers; comments and blank lines skipped.
  std::vector<std::pair<std::string, std::size_t>> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    for (auto& t : tokenize(line)) tokens.emplace_back(std::move(t), line_no);
  }
  std::size_t pos = 0;
  if (tokens.empty()) throw ParseError(name, 1, "empty OFF file");
  auto& header = tokens[0].first;
  if (header.rfind("OFF", 0) != 0) throw ParseError(name, tokens[0].second, "missing OFF header");
  if (header.size() > 3) {
    // Some exporters glue the first count onto the header ("OFF490 ...").
    header = header.substr(3);
  } else {
    pos = 1;
  }
  auto next = [&](const char* what) -> const std::pair<std::string, std::size_t>& {
    if (pos >= tokens.size()) {
      throw ParseError(name, tokens.empty() ? 1 : tokens.back().second,
                       std::string("unexpected end of file reading ") + what);
    }
    return tokens[pos++];
  };
  const auto& vt = next("vertex count");
  const long long nv = parse_int(vt.first, name, vt.second);
  const auto& ft = next("face count");
  const long long nf = parse_int(ft.first, name, ft.second);
  const auto& et = next("edge count");
  parse_int(et.first, name, et.second);
  if (nv < 0 || nf < 0) throw ParseError(name, vt.second, "negative element count");

  std::vector<Eigen::Vector3d> vertices;
  vertices.reserve(static_cast<std::size_t>(nv));
  for (long long i = 0; i < nv; ++i) {
    Eigen::Vector3d p;
    const std::size_t vline = pos < tokens.size() ? tokens[pos].second : 0;
    for (int d = 0; d < 3; ++d) {
      const auto& t = next("vertex");
      if (t.second != vline) throw ParseError(name, vline, "vertex needs 3 coordinates");
      p[d] = parse_double(t.first, name, t.second);
    }
    // Skip optional per-vertex extras on the same line.
    while (pos < tokens.size() && tokens[pos].second == vline) ++pos;
    vertices.push_back(p);
  }
  std::vector<RawFace> faces;
  faces.reserve(static_cast<std::size_t>(nf));
  for (long long i = 0; i < nf; ++i) {
    const auto& ct = next("face");
    RawFace face;
    face.line = ct.second;
    const long long corners = parse_int(ct.first, name, ct.second);
    if (corners < 3) throw ParseError(name, ct.second, "face needs at least 3 vertices");
    for (long long c = 0; c < corners; ++c) {
      const auto& it = next("face index");
      if (it.second != face.line) throw ParseError(name, face.line, "face has too few indices");
      face.corners.push_back(parse_int(it.first, name, it.second));
    }
    while (pos < tokens.size() && tokens[pos].second == face.line) ++pos;  // colors
    faces.push_back(std::move(face));
  }
  return build_mesh(vertices, faces, name);
}

TriangleMesh parse_obj(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<RawFace> faces;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "v") {
      if (tokens.size() < 4) throw ParseError(name, line_no, "vertex needs 3 coordinates");
      vertices.emplace_back(parse_double(tokens[1], name, line_no), parse_double(tokens[2], name, line_no),
                            parse_double(tokens[3], name, line_no));
    } else if (tokens[0] == "f") {
      RawFace face;
      face.line = line_no;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::string index = tokens[i].substr(0, tokens[i].find('/'));
        const long long raw = parse_int(index, name, line_no);
        if (raw == 0) throw ParseError(name, line_no, "OBJ indices are 1-based");
        // Negative indices are relative to the vertices read so far.
        face.corners.push_back(raw > 0 ? raw - 1 : static_cast<long long>(vertices.size()) + raw);
      }
      faces.push_back(std::move(face));
    }
  }
  return build_mesh(vertices, faces, name);
}

}  // namespace

TriangleMesh parse_mesh(const std::string& text, MeshFormat format, const std::string& name) {
  return format == MeshFormat::kOff ? parse_off(text, name) : parse_obj(text, name);
}

TriangleMesh load_mesh(const std::string& path, MeshFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open mesh file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_mesh(buffer.str(), format, path);
}

PointCloud sample_surface(const TriangleMesh& mesh, Index count, std::uint64_t seed,
                          std::vector<Index>* face_ids) {
  if (count < 1) throw ConfigError("sample_surface: point count must be >= 1");
  std::vector<double> cumulative(static_cast<std::size_t>(mesh.face_count()));
  double total = 0.0;
  for (Index f = 0; f < mesh.face_count(); ++f) {
    total += mesh.face_area(f);
    cumulative[static_cast<std::size_t>(f)] = total;
  }
  if (!(total > 0.0)) throw DataError("sample_surface: mesh has zero surface area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PointCloud cloud;
  cloud.points.resize(count, 3);
  if (face_ids) face_ids->assign(static_cast<std::size_t>(count), 0);
  for (Index i = 0; i < count; ++i) {
    const double pick = uniform(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto face = static_cast<Index>(it - cumulative.begin());
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(face, 0));
    const Eigen::RowVector3d b = mesh.vertices.row(mesh.faces(face, 1));
    const Eigen::RowVector3d c = mesh.vertices.row(mesh.faces(face, 2));
    const Eigen::RowVector3d p = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
    cloud.points.row(i) = p.cast<float>();
    if (face_ids) (*face_ids)[static_cast<std::size_t>(i)] = face;
  }
  return cloud;
}

}  // namespace pyramnet
