#include "iso3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace iso3d {

PointCloud::PointCloud(std::vector<Vec3> points) {
  for (const Vec3& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw std::invalid_argument("point cloud contains a non-finite coordinate");
    }
  }
  std::vector<std::uint32_t> order(points.size());
  std::iota(order.begin(), order.end(), 0u);
  // Stable sort keeps the first occurrence of each value at the front of its run.
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Vec3& p = points[a];
    const Vec3& q = points[b];
    if (p.x != q.x) return p.x < q.x;
    if (p.y != q.y) return p.y < q.y;
    return p.z < q.z;
  });
  std::vector<bool> keep(points.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || !(points[order[i]] == points[order[i - 1]])) keep[order[i]] = true;
  }
  points_.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (keep[i]) points_.push_back(points[i]);
  }
}

PointCloud PointCloud::subset(std::span<const std::uint32_t> indices) const {
  PointCloud out;
  out.points_.reserve(indices.size());
  for (std::uint32_t i : indices) out.points_.push_back(points_.at(i));
  return out;
}

VoxelGrid::VoxelGrid(int resolution) : resolution_(resolution) {
  if (resolution < 1) throw std::invalid_argument("voxel resolution must be positive");
  occupancy_.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0.0f);
}

CellIndex VoxelGrid::cell(std::size_t linear) const noexcept {
  const auto d = static_cast<std::size_t>(resolution_);
  return {static_cast<int>(linear / (d * d)), static_cast<int>((linear / d) % d),
          static_cast<int>(linear % d)};
}

void VoxelGrid::set(int i, int j, int k, float value) { set_linear(linear_index(i, j, k), value); }

void VoxelGrid::set_linear(std::size_t linear, float value) {
  if (!(value >= 0.0f && value <= 1.0f)) {
    throw std::invalid_argument("voxel occupancy must lie in [0,1]");
  }
  occupancy_.at(linear) = value;
}

std::vector<std::uint32_t> VoxelGrid::occupied_cells() const {
  std::vector<std::uint32_t> cells;
  for (std::size_t i = 0; i < occupancy_.size(); ++i) {
    if (occupancy_[i] > 0.0f) cells.push_back(static_cast<std::uint32_t>(i));
  }
  return cells;
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(
      std::count_if(occupancy_.begin(), occupancy_.end(), [](float v) { return v > 0.0f; }));
}

Vec3 VoxelGrid::cell_center(std::size_t linear) const noexcept {
  const CellIndex c = cell(linear);
  const float inv = 1.0f / static_cast<float>(resolution_);
  return {(c[0] + 0.5f) * inv, (c[1] + 0.5f) * inv, (c[2] + 0.5f) * inv};
}

}  // namespace iso3d
