#pragma once

#include <unistd.h>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "iso3d/model.hpp"
#include "iso3d/rng.hpp"

namespace iso3d::test {

inline std::vector<std::string> class_list(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
  return names;
}

inline Tensor make_tensor(std::vector<std::size_t> shape, std::vector<float> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

// Two classes decided by the largest x coordinate: class 1 iff max x > threshold.
// One hidden unit per point (relu(x)), then logits [0, gain * (l - threshold)].
inline Network threshold_network(float threshold = 0.5f, float gain = 10.0f) {
  ModelSpec spec;
  spec.family = Family::point_set;
  spec.class_names = class_list(2);
  spec.point_widths = {1};
  spec.fc_widths = {2};
  Weights w({{"point.0.weight", make_tensor({1, 3}, {1, 0, 0})},
             {"point.0.bias", make_tensor({1}, {0})},
             {"fc.0.weight", make_tensor({2, 1}, {0, gain})},
             {"fc.0.bias", make_tensor({2}, {0, -gain * threshold})}});
  return Network(spec, w);
}

// Small random point-set network for exhaustive searches.
inline Network toy_point_network(std::uint64_t seed, std::size_t classes = 2, int latent = 6) {
  ModelSpec spec;
  spec.family = Family::point_set;
  spec.class_names = class_list(classes);
  spec.point_widths = {8, latent};
  spec.fc_widths = {8, static_cast<int>(classes)};
  return Network(spec, init_weights(spec, seed));
}

inline Network toy_volume_network(std::uint64_t seed, int resolution = 8, std::size_t classes = 3) {
  ModelSpec spec;
  spec.family = Family::volumetric;
  spec.class_names = class_list(classes);
  spec.resolution = resolution;
  spec.conv_stages = {{3, 3, 2}, {4, 3, 2}};
  spec.fc_widths = {6, static_cast<int>(classes)};
  return Network(spec, init_weights(spec, seed));
}

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Vec3> pts;
  while (PointCloud(pts).size() < n) pts.push_back({u(rng), u(rng), u(rng)});
  return PointCloud(std::move(pts));
}

inline VoxelGrid random_grid(int resolution, double density, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution on(density);
  VoxelGrid g(resolution);
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    if (on(rng)) g.set_linear(c, 1.0f);
  }
  if (g.occupied_count() == 0) g.set_linear(0, 1.0f);
  return g;
}

}  // namespace iso3d::test

#include <filesystem>

namespace iso3d::test {

// A fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("iso3d-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace iso3d::test
