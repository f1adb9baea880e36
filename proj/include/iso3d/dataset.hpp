#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iso3d/geometry.hpp"

namespace iso3d {

struct LabeledExample {
  PointCloud input;
  std::size_t label = 0;
  std::string source;  ///< "synthetic:<kind>:<seed>" or a path relative to the dataset root
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;

  std::size_t class_count() const noexcept { return classes.size(); }

  /// Throws std::invalid_argument when a label is out of range or a source
  /// appears in both splits.
  void validate() const;
};

// Point-cloud binary format: "PC3D", u32 LE count, count * 3 f32 LE.
void write_cloud(std::ostream& out, const PointCloud& cloud);
PointCloud read_cloud(std::istream& in);
void save_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& path);

/// Writes `classes`, `manifest` and one .pc3d file per example under
/// <dir>/<split>/. Manifest lines are `<path>\t<class>\t<split>`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

struct SyntheticDatasetOptions {
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 40;
  std::size_t points = 256;
  double noise_sd = 0.01;
  std::uint64_t seed = 7;
};

/// One class per ShapeKind, in enum order.
Dataset make_synthetic_dataset(const SyntheticDatasetOptions& options);

}  // namespace iso3d
