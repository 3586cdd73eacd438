#include "pyramnet/dataset_io.hpp"
#include "pyramnet/errors.hpp"
#include "pyramnet/mesh.hpp"
#include "pyramnet/pointcloud.hpp"
#include "pyramnet/synthetic.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace pyramnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("pyramnet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kUnitCubeOff =
    "OFF\n8 6 0\n"
    "0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n"
    "4 0 3 2 1\n4 4 5 6 7\n4 0 1 5 4\n4 2 3 7 6\n4 1 2 6 5\n4 0 4 7 3\n";

PointCloud random_cloud(Index n, Index f, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 2.0f);
  PointCloud c;
  c.points.resize(n, f);
  for (Index i = 0; i < c.points.size(); ++i) c.points.data()[i] = normal(rng);
  return c;
}

}  // namespace

TEST_SUITE("pointcloud") {

TEST_CASE("minimal OFF file") {
  const auto mesh = parse_mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2", MeshFormat::kOff);
  CHECK(mesh.vertex_count() == 3);
  CHECK(mesh.face_count() == 1);
}

TEST_CASE("OBJ quad is fan triangulated") {
  const auto mesh = parse_mesh("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", MeshFormat::kObj);
  CHECK(mesh.face_count() == 2);
  CHECK(mesh.face_area(0) + mesh.face_area(1) == doctest::Approx(1.0));
}

TEST_CASE("face index out of range reports the line") {
  try {
    parse_mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n", MeshFormat::kOff, "tri.off");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
    CHECK(std::string(e.what()).find("tri.off:6") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", MeshFormat::kObj), ParseError);
  CHECK_THROWS_AS(parse_mesh("OF\n3 1 0\n", MeshFormat::kOff), ParseError);
}

TEST_CASE("degenerate faces are dropped") {
  const auto mesh = parse_mesh("OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n2 0 0\n3 0 1 2\n3 0 1 3\n", MeshFormat::kOff);
  CHECK(mesh.face_count() == 1);
  CHECK(mesh.dropped_faces == 1);
  for (Index f = 0; f < mesh.face_count(); ++f) {
    CHECK(mesh.face_area(f) > kDegenerateArea);
    CHECK(mesh.faces.row(f).maxCoeff() < mesh.vertex_count());
  }
  const auto flat = parse_mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n", MeshFormat::kOff);
  CHECK_THROWS_AS(sample_surface(flat, 10, 1), DataError);
}

TEST_CASE("samples lie in their triangle") {
  const auto mesh = parse_mesh("OFF\n3 1 0\n0.2 -1 0.5\n1.5 0.3 -0.2\n-0.4 0.9 1.1\n3 0 1 2\n", MeshFormat::kOff);
  const PointCloud cloud = sample_surface(mesh, 2000, 4);
  const Eigen::Vector3d a = mesh.vertices.row(0), b = mesh.vertices.row(1), c = mesh.vertices.row(2);
  const Eigen::Vector3d normal = (b - a).cross(c - a).normalized();
  Eigen::Matrix<double, 3, 2> basis;
  basis << b - a, c - a;
  for (Index i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d p = cloud.points.row(i).head<3>().cast<double>();
    CHECK(std::abs(normal.dot(p - a)) < 1e-6);
    const Eigen::Vector2d uv = basis.colPivHouseholderQr().solve(p - a);
    const double w0 = 1.0 - uv[0] - uv[1];
    CHECK(uv.minCoeff() >= -1e-6);
    CHECK(w0 >= -1e-6);
    CHECK(uv[0] + uv[1] + w0 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("face choice is area weighted") {
  // triangle areas 1 and 3
  const auto mesh = parse_mesh("OFF\n6 2 0\n0 0 0\n2 0 0\n0 1 0\n0 0 5\n3 0 5\n0 2 5\n3 0 1 2\n3 3 4 5\n",
                               MeshFormat::kOff);
  REQUIRE(mesh.face_area(0) == doctest::Approx(1.0));
  REQUIRE(mesh.face_area(1) == doctest::Approx(3.0));
  std::vector<Index> faces;
  sample_surface(mesh, 10000, 7, &faces);
  const double frac = double(std::count(faces.begin(), faces.end(), Index{1})) / 10000.0;
  CHECK(std::abs(frac - 0.75) < 0.03);
}

TEST_CASE("unit cube faces are hit evenly") {
  const auto mesh = parse_mesh(kUnitCubeOff, MeshFormat::kOff);
  REQUIRE(mesh.face_count() == 12);
  const PointCloud cloud = sample_surface(mesh, 10000, 8);
  // Classify each point by which cube face plane it lies on.
  std::array<int, 6> hits{};
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      const float v = cloud.points(i, axis);
      if (std::abs(v) < 1e-6f) { ++hits[axis * 2]; break; }
      if (std::abs(v - 1.0f) < 1e-6f) { ++hits[axis * 2 + 1]; break; }
    }
  }
  for (int h : hits) CHECK(std::abs(h / 10000.0 - 1.0 / 6.0) < 0.02);
}

TEST_CASE("sampling is deterministic per seed") {
  const auto mesh = parse_mesh(kUnitCubeOff, MeshFormat::kOff);
  CHECK(sample_surface(mesh, 64, 3).points == sample_surface(mesh, 64, 3).points);
  CHECK(sample_surface(mesh, 64, 3).points != sample_surface(mesh, 64, 4).points);
}

TEST_CASE("normalize examples") {
  PointCloud c;
  c.points.resize(2, 3);
  c.points << 0, 0, 0, 2, 0, 0;
  const PointCloud n = normalize_unit_sphere(c);
  CHECK(n.points(0, 0) == doctest::Approx(-1.0));
  CHECK(n.points(1, 0) == doctest::Approx(1.0));
  CHECK(n.points.col(1).cwiseAbs().maxCoeff() == 0.0f);

  PointCloud same;
  same.points = RowMatrix<float>::Ones(4, 3);
  CHECK_THROWS_AS(normalize_unit_sphere(same), DataError);
}

TEST_CASE("normalize invariants, idempotence and untouched attributes") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = random_cloud(50, 6, rng);
    const PointCloud n = normalize_unit_sphere(c);
    const auto xyz = n.points.leftCols(3).cast<double>();
    CHECK(xyz.rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(xyz.colwise().mean().norm() < 1e-6);
    CHECK(n.points.rightCols(3) == c.points.rightCols(3));
    const PointCloud twice = normalize_unit_sphere(n);
    CHECK((twice.points - n.points).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("augment with rotation and jitter off is identity") {
  std::mt19937_64 rng(10);
  PointCloud c = random_cloud(30, 3, rng);
  AugmentConfig cfg;
  cfg.rotate = false;
  cfg.jitter_sigma = 0.0;
  CHECK(augment(c, 5, cfg).points == c.points);
  CHECK(rotate_about_up(c, 0.0).points == c.points);
}

TEST_CASE("rotation about y preserves horizontal distances and height") {
  std::mt19937_64 rng(11);
  PointCloud c = random_cloud(20, 3, rng);
  const PointCloud r = rotate_about_up(c, 1.234);
  CHECK(r.points.col(1) == c.points.col(1));
  for (Index i = 0; i < 20; ++i)
    for (Index j = 0; j < 20; ++j) {
      const auto dist = [](const PointCloud& p, Index a, Index b) {
        return std::hypot(double(p.points(a, 0)) - p.points(b, 0), double(p.points(a, 2)) - p.points(b, 2));
      };
      CHECK(dist(r, i, j) == doctest::Approx(dist(c, i, j)).epsilon(1e-5));
    }
}

TEST_CASE("jitter is clipped and labels survive") {
  std::mt19937_64 rng(12);
  PointCloud c = random_cloud(200, 5, rng);
  c.cloud_label = 2;
  c.point_labels.assign(200, 1);
  AugmentConfig cfg;
  cfg.rotate = false;
  cfg.jitter_sigma = 0.05;  // wide enough to hit the clip often
  const PointCloud a = augment(c, 99, cfg);
  CHECK(a.size() == c.size());
  CHECK(a.features() == c.features());
  CHECK(a.cloud_label == 2);
  CHECK(a.point_labels == c.point_labels);
  CHECK((a.points.leftCols(3) - c.points.leftCols(3)).cwiseAbs().maxCoeff() <= 0.05f + 1e-6f);
  CHECK(a.points.rightCols(2) == c.points.rightCols(2));
  const PointCloud full = augment(c, 99);
  CHECK(full.size() == c.size());
  CHECK(full.point_labels == c.point_labels);
}

TEST_CASE("synthetic sphere sits on the unit sphere") {
  std::mt19937_64 rng(13);
  const PointCloud s = synthetic_shape("sphere", 500, rng);
  const Eigen::VectorXd r = s.points.leftCols(3).cast<double>().rowwise().norm();
  CHECK((r.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("synthetic shapes are unit radius") {
  std::mt19937_64 rng(14);
  for (const auto& name : synthetic_classification_shapes()) {
    const PointCloud s = synthetic_shape(name, 256, rng);
    CHECK(s.points.leftCols(3).cast<double>().rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK_THROWS_AS(synthetic_shape("teapot", 10, rng), ConfigError);
}

TEST_CASE("synthetic part labels follow geometry exactly") {
  const Dataset d = make_synthetic(Task::kPartSeg, synthetic_part_categories(), 4, 300, 3);
  d.validate();
  for (const auto& c : d.clouds) {
    REQUIRE(c.point_labels.size() == 300);
    for (Index i = 0; i < c.size(); ++i) CHECK(c.point_labels[std::size_t(i)] == (c.points(i, 1) > 0.0f ? 1 : 0));
  }
}

TEST_CASE("synthetic classification set is balanced") {
  const Dataset d = make_synthetic(Task::kClassification, synthetic_classification_shapes(), 32, 64, 5);
  CHECK(d.clouds.size() == 128);
  CHECK(d.num_classes == 4);
  std::map<int, int> counts;
  for (const auto& c : d.clouds) ++counts[c.cloud_label];
  for (const auto& [label, n] : counts) CHECK(n == 32);
  CHECK(counts.size() == 4);
  CHECK_THROWS_AS(make_synthetic(Task::kClassification, {"sphere", "blob"}, 2, 8, 1), ConfigError);
}

TEST_CASE("batch sizes, determinism and order") {
  const auto plan = plan_batches(10, 4, true, 3, 0);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].size() == 4);
  CHECK(plan[1].size() == 4);
  CHECK(plan[2].size() == 2);
  CHECK(plan == plan_batches(10, 4, true, 3, 0));
  CHECK(plan != plan_batches(10, 4, true, 3, 1));
  const auto ordered = plan_batches(10, 4, false, 3, 0);
  std::size_t next = 0;
  for (const auto& b : ordered)
    for (std::size_t i : b) CHECK(i == next++);
  std::set<std::size_t> seen;
  for (const auto& b : plan) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);
}

TEST_CASE("batches assemble B x N x F") {
  const Dataset d = make_synthetic(Task::kPartSeg, {"capsule"}, 5, 16, 2);
  const auto bs = batches<float>(d, 2, false, 0);
  REQUIRE(bs.size() == 3);
  CHECK(bs[0].points.shape() == Shape{2, 16, 3});
  CHECK(bs[0].labels.size() == 32);
  CHECK(bs[2].points.shape() == Shape{1, 16, 3});
  CHECK(bs[0].points.value()[3] == d.clouds[0].points(1, 0));
}

TEST_CASE("mixed N is a data error") {
  Dataset d = make_synthetic(Task::kClassification, {"sphere"}, 3, 16, 2);
  d.clouds[1].points.conservativeResize(12, 3);
  CHECK_THROWS_AS(batches<float>(d, 2, false, 0), DataError);
  CHECK_THROWS_AS(d.points_per_cloud(), DataError);
}

TEST_CASE("dataset validation") {
  Dataset d = make_synthetic(Task::kClassification, {"sphere", "cube"}, 2, 8, 1);
  d.validate();
  d.clouds[0].cloud_label = 2;
  CHECK_THROWS_AS(d.validate(), DataError);
}

TEST_CASE("pcld round trip and dataset on disk") {
  const fs::path dir = scratch_dir("pcld");
  const Dataset d = make_synthetic(Task::kPartSeg, synthetic_part_categories(), 2, 20, 6);
  save_dataset(d, dir.string());
  CHECK(fs::exists(dir / "manifest.tsv"));
  CHECK(fs::exists(dir / "categories.tsv"));
  const Dataset back = load_dataset(dir.string(), d.split);
  REQUIRE(back.clouds.size() == d.clouds.size());
  CHECK(back.task == Task::kPartSeg);
  CHECK(back.class_names == d.class_names);
  CHECK(back.categories.size() == d.categories.size());
  for (std::size_t i = 0; i < d.clouds.size(); ++i) {
    CHECK(back.clouds[i].points == d.clouds[i].points);
    CHECK(back.clouds[i].point_labels == d.clouds[i].point_labels);
    CHECK(back.clouds[i].cloud_label == d.clouds[i].cloud_label);
  }
  std::stringstream bad("PCLX0000");
  CHECK_THROWS_AS(read_pcld(bad), DataError);
}

TEST_CASE("scene-style text cloud with nine attributes") {
  const fs::path dir = scratch_dir("txt");
  std::ofstream(dir / "room.txt") << "0.1 0.2 0.3 10 20 30 0.5 0.5 0.1 2\n"
                                     "0.4,0.5,0.6,40,50,60,0.2,0.9,0.3,7\n"
                                     "1 1 1 0 0 0 1 1 1 0\n";
  const PointCloud c = load_txt_cloud((dir / "room.txt").string(), {9, true});
  CHECK(c.size() == 3);
  CHECK(c.features() == 9);
  CHECK(c.point_labels == std::vector<int>{2, 7, 0});
  CHECK(c.points(1, 5) == 60.0f);
  std::ofstream(dir / "bad.txt") << "1 2 3\n1 2 x\n";
  try {
    load_txt_cloud((dir / "bad.txt").string(), {3, false});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("train/test split is deterministic and disjoint") {
  const Dataset d = make_synthetic(Task::kClassification, synthetic_classification_shapes(), 32, 8, 1);
  const auto [train, test] = split_train_test(d, 4);
  CHECK(train.clouds.size() + test.clouds.size() == d.clouds.size());
  CHECK(test.clouds.size() > 10);
  CHECK(test.clouds.size() < 45);
  const auto again = split_train_test(d, 4);
  CHECK(again.second.clouds.size() == test.clouds.size());
}

}  // TEST_SUITE
