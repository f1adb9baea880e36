#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace iso3d {

struct Vec3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;

  friend bool operator==(const Vec3&, const Vec3&) = default;
  friend auto operator<=>(const Vec3&, const Vec3&) = default;
};

/// A finite set of unique 3D points. Construction collapses duplicates,
/// keeping the first occurrence, so size() is the cardinality of the set.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points);

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const noexcept { return points_; }

  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  /// The cloud restricted to the given indices (kept in the given order).
  PointCloud subset(std::span<const std::uint32_t> indices) const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
};

using CellIndex = std::array<int, 3>;

/// d x d x d occupancy tensor, row-major with the last axis fastest.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution);

  int resolution() const noexcept { return resolution_; }
  std::size_t cell_count() const noexcept { return occupancy_.size(); }

  std::size_t linear_index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(i) * resolution_ + j) * resolution_ + k;
  }
  CellIndex cell(std::size_t linear) const noexcept;

  float at(int i, int j, int k) const { return occupancy_[linear_index(i, j, k)]; }
  void set(int i, int j, int k, float value);
  void set_linear(std::size_t linear, float value);

  std::span<const float> occupancy() const noexcept { return occupancy_; }

  /// Linear indices of cells with occupancy > 0, ascending.
  std::vector<std::uint32_t> occupied_cells() const;
  std::size_t occupied_count() const;

  /// Center of a cell in unit-cube coordinates.
  Vec3 cell_center(std::size_t linear) const noexcept;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<float> occupancy_;
};

struct Mesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

}  // namespace iso3d
