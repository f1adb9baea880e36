#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>

#include "iso3d/geometry.hpp"

namespace iso3d {

/// Parses an OFF mesh. Polygons are fan-triangulated and zero-area
/// triangles are dropped. Throws ParseError carrying the offending line.
Mesh parse_off(std::istream& in);
Mesh parse_off_text(std::string_view text);
Mesh load_off(const std::string& path);

/// Area-weighted uniform surface sampling. Duplicate draws are resampled
/// until n unique points exist or the retry cap is hit.
PointCloud sample_points(const Mesh& mesh, std::size_t n, std::uint64_t seed);

/// Isotropic scale and translation so the longest axis spans [0,1] and the
/// other axes are centered on 0.5. A degenerate cloud lands on the cube center.
PointCloud normalize_unit_cube(const PointCloud& cloud);

/// Binary occupancy: a cell is 1 when any point floors into it.
VoxelGrid voxelize(const PointCloud& cloud, int resolution);

enum class ShapeKind { sphere = 0, cube, cylinder, cone, torus };

inline constexpr int kShapeKindCount = 5;

std::string_view shape_kind_name(ShapeKind kind);
std::optional<ShapeKind> shape_kind_from_name(std::string_view name);

struct SyntheticShape {
  PointCloud cloud;
  ShapeKind kind;
  std::uint64_t seed;
};

/// Points on an analytic surface, jittered by isotropic Gaussian noise, then
/// normalized. Shape proportions (cylinder/cone aspect, torus radii) vary
/// with the seed.
SyntheticShape synth_shape(ShapeKind kind, std::size_t n, double noise_sd, std::uint64_t seed);
SyntheticShape synth_shape(std::string_view kind, std::size_t n, double noise_sd, std::uint64_t seed);

}  // namespace iso3d
