#include "pyramnet/dataset_io.hpp"

#include "pyramnet/binary_io.hpp"
#include "pyramnet/errors.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace pyramnet {

namespace fs = std::filesystem;

namespace {
constexpr std::array<char, 4> kPcldMagic{'P', 'C', 'L', 'D'};

std::uint32_t task_tag(Task task) { return static_cast<std::uint32_t>(task); }

Task task_from_tag(std::uint32_t tag, const std::string& name) {
  if (tag > 2) throw DataError(name + ": unknown task tag " + std::to_string(tag));
  return static_cast<Task>(tag);
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  return fields;
}
}  // namespace

void write_pcld(std::ostream& out, const PointCloud& cloud, Task task) {
  out.write(kPcldMagic.data(), kPcldMagic.size());
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.size()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.features()));
  binary::write_le<std::uint32_t>(out, task_tag(task));
  binary::write_le<std::int32_t>(out, cloud.cloud_label);
  binary::write_le<std::uint32_t>(out, cloud.has_point_labels() ? 1u : 0u);
  binary::write_array(out, cloud.points.data(), static_cast<std::size_t>(cloud.points.size()));
  if (cloud.has_point_labels()) {
    if (static_cast<Index>(cloud.point_labels.size()) != cloud.size()) {
      throw DataError("write_pcld: point label count does not match point count");
    }
    std::vector<std::int32_t> labels(cloud.point_labels.begin(), cloud.point_labels.end());
    binary::write_array(out, labels.data(), labels.size());
  }
}

PointCloud read_pcld(std::istream& in, Task* task, const std::string& name) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kPcldMagic) {
    throw DataError(name + ": not a PCLD record");
  }
  const auto n = binary::read_le<std::uint32_t>(in, name);
  const auto f = binary::read_le<std::uint32_t>(in, name);
  const Task t = task_from_tag(binary::read_le<std::uint32_t>(in, name), name);
  if (task) *task = t;
  PointCloud cloud;
  cloud.cloud_label = binary::read_le<std::int32_t>(in, name);
  const auto has_labels = binary::read_le<std::uint32_t>(in, name);
  if (n < 1 || f < 3) throw DataError(name + ": needs N >= 1 and F >= 3");
  cloud.points.resize(n, f);
  binary::read_array(in, cloud.points.data(), static_cast<std::size_t>(n) * f, name);
  if (has_labels) {
    std::vector<std::int32_t> labels(n);
    binary::read_array(in, labels.data(), labels.size(), name);
    cloud.point_labels.assign(labels.begin(), labels.end());
  }
  return cloud;
}

void save_pcld(const std::string& path, const PointCloud& cloud, Task task) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_pcld(out, cloud, task);
  if (!out) throw DataError("write failed for '" + path + "'");
}

PointCloud load_pcld(const std::string& path, Task* task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_pcld(in, task, path);
}

void save_dataset(const Dataset& dataset, const std::string& root) {
  const fs::path dir = fs::path(root) / dataset.split;
  fs::create_directories(dir);
  {
    std::ofstream manifest(fs::path(root) / "manifest.tsv", std::ios::trunc);
    for (std::size_t i = 0; i < dataset.class_names.size(); ++i) {
      manifest << i << '\t' << dataset.class_names[i] << '\n';
    }
  }
  if (!dataset.categories.empty()) {
    std::ofstream categories(fs::path(root) / "categories.tsv", std::ios::trunc);
    for (std::size_t i = 0; i < dataset.categories.size(); ++i) {
      categories << i << '\t' << dataset.categories[i].name << '\t';
      const auto& parts = dataset.categories[i].parts;
      for (std::size_t p = 0; p < parts.size(); ++p) categories << (p ? "," : "") << parts[p];
      categories << '\n';
    }
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pcld") fs::remove(entry.path());
  }
  for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".pcld";
    save_pcld((dir / name.str()).string(), dataset.clouds[i], dataset.task);
  }
}

Dataset load_dataset(const std::string& root, const std::string& split) {
  const fs::path base(root);
  const fs::path manifest_path = base / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError("missing manifest '" + manifest_path.string() + "'");
  Dataset dataset;
  dataset.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 2) throw ParseError(manifest_path.string(), line_no, "expected class_id<TAB>name");
    if (fields[0] != std::to_string(dataset.class_names.size())) {
      throw ParseError(manifest_path.string(), line_no, "class ids must be consecutive from 0");
    }
    dataset.class_names.push_back(fields[1]);
  }
  dataset.num_classes = static_cast<int>(dataset.class_names.size());

  std::ifstream categories(base / "categories.tsv");
  line_no = 0;
  while (categories && std::getline(categories, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 3) {
      throw ParseError((base / "categories.tsv").string(), line_no, "expected id<TAB>name<TAB>parts");
    }
    PartCategory category{fields[1], {}};
    for (const auto& p : split_fields(fields[2], ',')) category.parts.push_back(std::stoi(p));
    dataset.categories.push_back(std::move(category));
  }

  const fs::path dir = base / split;
  if (!fs::is_directory(dir)) throw DataError("missing split directory '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pcld") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .pcld records under '" + dir.string() + "'");
  for (std::size_t i = 0; i < files.size(); ++i) {
    Task task{};
    dataset.clouds.push_back(load_pcld(files[i].string(), &task));
    if (i == 0) {
      dataset.task = task;
    } else if (task != dataset.task) {
      throw DataError(files[i].string() + ": task differs from the rest of the split");
    }
  }
  dataset.validate();
  return dataset;
}

PointCloud load_txt_cloud(const std::string& path, const TxtColumns& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  if (columns.features < 3) throw ConfigError("txt conversion needs at least 3 feature columns");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t needed = static_cast<std::size_t>(columns.features) + (columns.label_last ? 1 : 0);
  while (std::getline(in, line)) {
    ++line_no;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      try {
        values.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ParseError(path, line_no, "expected a number, got '" + token + "'");
      }
    }
    if (values.empty()) continue;
    if (values.size() < needed) {
      throw ParseError(path, line_no, "expected at least " + std::to_string(needed) + " columns");
    }
    if (columns.label_last) labels.push_back(static_cast<int>(values.back()));
    values.resize(static_cast<std::size_t>(columns.features));
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError(path + ": no points");
  PointCloud cloud;
  cloud.points.resize(static_cast<Index>(rows.size()), columns.features);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Index c = 0; c < columns.features; ++c) {
      cloud.points(static_cast<Index>(r), c) = static_cast<float>(rows[r][static_cast<std::size_t>(c)]);
    }
  }
  cloud.point_labels = std::move(labels);
  return cloud;
}

}  // namespace pyramnet
