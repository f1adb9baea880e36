#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "iso3d/geometry.hpp"
#include "iso3d/model.hpp"

namespace iso3d {

/// Which of an input's elements are still present. Element indices refer to
/// the original input and never change as elements are removed.
class Survivors {
 public:
  Survivors() = default;
  explicit Survivors(std::size_t elements) : alive_(elements, 1), count_(elements) {}

  std::size_t elements() const noexcept { return alive_.size(); }
  std::size_t count() const noexcept { return count_; }
  bool contains(std::uint32_t e) const { return alive_.at(e) != 0; }

  void remove(std::uint32_t e);
  void restore(std::uint32_t e);
  Survivors without(std::uint32_t e) const;
  Survivors with(std::uint32_t e) const;

  /// Surviving element indices, ascending.
  std::vector<std::uint32_t> indices() const;
  std::span<const std::uint8_t> mask() const noexcept { return alive_; }

  friend bool operator==(const Survivors&, const Survivors&) = default;
  friend auto operator<=>(const Survivors&, const Survivors&) = default;

 private:
  std::vector<std::uint8_t> alive_;
  std::size_t count_ = 0;
};

/// An input seen as a set of removable elements: the points of a cloud, or
/// the occupied cells of a voxel grid (in ascending linear order).
class OcclusionInput {
 public:
  static OcclusionInput from_cloud(PointCloud cloud);
  static OcclusionInput from_grid(VoxelGrid grid);
  /// The cloud itself for point-set models, its voxelization otherwise.
  static OcclusionInput for_model(const ModelSpec& spec, const PointCloud& cloud);

  Family family() const noexcept { return family_; }
  std::size_t size() const noexcept { return family_ == Family::point_set ? cloud_.size() : cells_.size(); }
  /// Point coordinates, or the cell center for voxels.
  Vec3 position(std::uint32_t element) const;

  const PointCloud& cloud() const noexcept { return cloud_; }
  const VoxelGrid& grid() const noexcept { return grid_; }
  std::span<const std::uint32_t> cells() const noexcept { return cells_; }

  ModelInput materialize(const Survivors& survivors) const;
  Survivors all() const { return Survivors(size()); }

 private:
  Family family_ = Family::point_set;
  PointCloud cloud_;
  VoxelGrid grid_;
  std::vector<std::uint32_t> cells_;
};

struct Observation {
  std::vector<float> logits;
  std::vector<float> probs;
  Prediction prediction;
};

/// Counts every forward pass made against one input. Point-set models cache
/// per-point latent rows so a subset query only pools and runs the FCN; the
/// result is bit-identical to a fresh forward pass on the subset.
class QueryOracle {
 public:
  QueryOracle(const Network& net, const OcclusionInput& input);

  const Network& network() const noexcept { return *net_; }
  const OcclusionInput& input() const noexcept { return *input_; }

  /// Black-box view: outputs only.
  Observation observe(const Survivors& survivors);
  /// White-box view: the full trace. Rows follow ascending survivor order.
  ForwardTrace trace(const Survivors& survivors);

  std::uint64_t queries() const noexcept { return queries_; }
  /// Longest single forward pass seen so far.
  double max_query_seconds() const noexcept { return max_query_seconds_; }

 private:
  const Network* net_;
  const OcclusionInput* input_;
  std::vector<float> rows_;  // point-set: element x latent_dim
  std::size_t latent_ = 0;
  std::uint64_t queries_ = 0;
  double max_query_seconds_ = 0.0;

  ForwardTrace run(const Survivors& survivors, bool with_rows);
};

Observation observe(const ForwardTrace& trace);

}  // namespace iso3d
