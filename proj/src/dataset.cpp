#include "iso3d/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "iso3d/binary_io.hpp"
#include "iso3d/rng.hpp"
#include "iso3d/shapes.hpp"

namespace iso3d {

void Dataset::validate() const {
  std::set<std::string> train_sources;
  for (const auto* split : {&train, &test}) {
    for (const auto& ex : *split) {
      if (ex.label >= classes.size()) {
        throw std::invalid_argument("label " + std::to_string(ex.label) + " out of range for '" +
                                    ex.source + "'");
      }
    }
  }
  for (const auto& ex : train) train_sources.insert(ex.source);
  for (const auto& ex : test) {
    if (train_sources.count(ex.source)) {
      throw std::invalid_argument("source '" + ex.source + "' appears in both train and test");
    }
  }
}

void write_cloud(std::ostream& out, const PointCloud& cloud) {
  out.write("PC3D", 4);
  binary::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.size()));
  for (const Vec3& p : cloud) {
    binary::put_f32(out, p.x);
    binary::put_f32(out, p.y);
    binary::put_f32(out, p.z);
  }
}

PointCloud read_cloud(std::istream& in) {
  binary::expect_magic(in, "PC3D");
  const auto count = binary::get_uint<std::uint32_t>(in, "point count");
  std::vector<Vec3> points;
  points.reserve(std::min<std::uint32_t>(count, 1u << 20));
  for (std::uint32_t i = 0; i < count; ++i) {
    const float x = binary::get_f32(in, "point");
    const float y = binary::get_f32(in, "point");
    const float z = binary::get_f32(in, "point");
    points.push_back({x, y, z});
  }
  PointCloud cloud(std::move(points));
  if (cloud.size() != count) throw FormatError("point cloud file contains duplicate points");
  return cloud;
}

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_cloud(out, cloud);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PointCloud load_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_cloud(in);
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  dataset.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  {
    std::ofstream classes(dir / "classes");
    for (const auto& name : dataset.classes) classes << name << '\n';
  }
  std::ofstream manifest(dir / "manifest");
  auto write_split = [&](const std::vector<LabeledExample>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      std::ostringstream rel;
      rel << name << '/' << std::setw(5) << std::setfill('0') << i << ".pc3d";
      save_cloud(dir / rel.str(), split[i].input);
      manifest << rel.str() << '\t' << dataset.classes[split[i].label] << '\t' << name << '\n';
    }
  };
  write_split(dataset.train, "train");
  write_split(dataset.test, "test");
  if (!manifest) throw std::runtime_error("failed writing manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset dataset;
  std::ifstream classes(dir / "classes");
  if (!classes) throw std::runtime_error("missing classes file in " + dir.string());
  std::map<std::string, std::size_t> label_of;
  for (std::string line; std::getline(classes, line);) {
    if (line.empty()) continue;
    label_of.emplace(line, dataset.classes.size());
    dataset.classes.push_back(line);
  }

  std::ifstream manifest(dir / "manifest");
  if (!manifest) throw std::runtime_error("missing manifest in " + dir.string());
  std::size_t line_no = 0;
  for (std::string line; std::getline(manifest, line);) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos || line.find('\t', tab2 + 1) != std::string::npos) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected three tab-separated fields");
    }
    const std::string rel = line.substr(0, tab1);
    const std::string cls = line.substr(tab1 + 1, tab2 - tab1 - 1);
    const std::string split = line.substr(tab2 + 1);
    const auto it = label_of.find(cls);
    if (it == label_of.end()) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": unknown class '" + cls + "'");
    }
    LabeledExample ex{load_cloud(dir / rel), it->second, rel};
    if (split == "train") {
      dataset.train.push_back(std::move(ex));
    } else if (split == "test") {
      dataset.test.push_back(std::move(ex));
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
  }
  dataset.validate();
  return dataset;
}

Dataset make_synthetic_dataset(const SyntheticDatasetOptions& options) {
  Dataset dataset;
  for (int k = 0; k < kShapeKindCount; ++k) {
    dataset.classes.emplace_back(shape_kind_name(static_cast<ShapeKind>(k)));
  }
  auto fill = [&](std::vector<LabeledExample>& split, std::size_t per_class, std::uint64_t stream) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (int k = 0; k < kShapeKindCount; ++k) {
        const std::uint64_t seed = mix_seed(mix_seed(options.seed, stream), i * kShapeKindCount + k);
        const auto kind = static_cast<ShapeKind>(k);
        auto shape = synth_shape(kind, options.points, options.noise_sd, seed);
        split.push_back({std::move(shape.cloud), static_cast<std::size_t>(k),
                         "synthetic:" + std::string(shape_kind_name(kind)) + ":" + std::to_string(seed)});
      }
    }
  };
  fill(dataset.train, options.train_per_class, 0);
  fill(dataset.test, options.test_per_class, 1);
  dataset.validate();
  return dataset;
}

}  // namespace iso3d
