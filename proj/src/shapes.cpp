#include "iso3d/shapes.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "iso3d/error.hpp"
#include "iso3d/rng.hpp"

namespace iso3d {
namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

bool parse_count(std::string_view token, std::uint64_t& out) {
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

bool parse_real(std::string_view token, double& out) {
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc{} && ptr == end && std::isfinite(out);
}

double triangle_area2(const Mesh& mesh, const std::array<std::uint32_t, 3>& t) {
  const auto& a = mesh.vertices[t[0]];
  const auto& b = mesh.vertices[t[1]];
  const auto& c = mesh.vertices[t[2]];
  const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const double cx = u[1] * v[2] - u[2] * v[1];
  const double cy = u[2] * v[0] - u[0] * v[2];
  const double cz = u[0] * v[1] - u[1] * v[0];
  return std::sqrt(cx * cx + cy * cy + cz * cz);
}

// Caps reserve() so a hostile header cannot force a huge allocation.
constexpr std::uint64_t kReserveCap = 1u << 20;

}  // namespace

Mesh parse_off(std::istream& in) {
  enum class Stage { header, counts, vertices, faces, done };
  Stage stage = Stage::header;
  Mesh mesh;
  std::uint64_t vertex_count = 0;
  std::uint64_t face_count = 0;
  std::uint64_t faces_seen = 0;
  std::size_t line_no = 0;
  std::string raw;

  auto read_counts = [&](std::span<const std::string_view> tokens) {
    if (tokens.size() < 2 || tokens.size() > 3) {
      throw ParseError(line_no, "expected '<vertices> <faces> [<edges>]'");
    }
    std::uint64_t edges = 0;
    if (!parse_count(tokens[0], vertex_count) || !parse_count(tokens[1], face_count) ||
        (tokens.size() == 3 && !parse_count(tokens[2], edges))) {
      throw ParseError(line_no, "counts must be non-negative integers");
    }
    if (vertex_count > std::numeric_limits<std::uint32_t>::max()) {
      throw ParseError(line_no, "vertex count too large");
    }
    mesh.vertices.reserve(std::min(vertex_count, kReserveCap));
    mesh.triangles.reserve(std::min(face_count, kReserveCap));
    stage = vertex_count > 0 ? Stage::vertices : (face_count > 0 ? Stage::faces : Stage::done);
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;

    switch (stage) {
      case Stage::header: {
        const std::string_view head = tokens[0];
        if (head.substr(0, 3) != "OFF") throw ParseError(line_no, "missing 'OFF' header");
        // Some ModelNet files glue the counts onto the header ("OFF490 518 0").
        std::vector<std::string_view> rest;
        if (head.size() > 3) rest.push_back(head.substr(3));
        rest.insert(rest.end(), tokens.begin() + 1, tokens.end());
        if (rest.empty()) {
          stage = Stage::counts;
        } else {
          read_counts(rest);
        }
        break;
      }
      case Stage::counts:
        read_counts(tokens);
        break;
      case Stage::vertices: {
        if (tokens.size() < 3) throw ParseError(line_no, "vertex needs three coordinates");
        std::array<double, 3> v{};
        for (int a = 0; a < 3; ++a) {
          if (!parse_real(tokens[a], v[a])) throw ParseError(line_no, "bad vertex coordinate");
        }
        mesh.vertices.push_back(v);
        if (mesh.vertices.size() == vertex_count) stage = face_count > 0 ? Stage::faces : Stage::done;
        break;
      }
      case Stage::faces: {
        std::uint64_t k = 0;
        if (!parse_count(tokens[0], k)) throw ParseError(line_no, "bad face vertex count");
        if (k < 3) throw ParseError(line_no, "face needs at least three vertices");
        if (k >= tokens.size()) throw ParseError(line_no, "face has fewer indices than declared");
        std::vector<std::uint32_t> polygon;
        polygon.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(k, kReserveCap)));
        for (std::uint64_t i = 1; i <= k; ++i) {
          std::uint64_t idx = 0;
          if (!parse_count(tokens[i], idx)) throw ParseError(line_no, "bad face index");
          if (idx >= vertex_count) throw ParseError(line_no, "face index out of range");
          polygon.push_back(static_cast<std::uint32_t>(idx));
        }
        for (std::size_t i = 1; i + 1 < polygon.size(); ++i) {
          const std::array<std::uint32_t, 3> tri{polygon[0], polygon[i], polygon[i + 1]};
          if (triangle_area2(mesh, tri) > 0.0) mesh.triangles.push_back(tri);
        }
        if (++faces_seen == face_count) stage = Stage::done;
        break;
      }
      case Stage::done:
        throw ParseError(line_no, "more data than the header declares");
    }
  }

  switch (stage) {
    case Stage::header:
      throw ParseError(line_no + 1, "missing 'OFF' header");
    case Stage::counts:
      throw ParseError(line_no + 1, "missing counts line");
    case Stage::vertices:
      throw ParseError(line_no + 1, "expected " + std::to_string(vertex_count) + " vertices, found " +
                                        std::to_string(mesh.vertices.size()));
    case Stage::faces:
      throw ParseError(line_no + 1, "expected " + std::to_string(face_count) + " faces, found " +
                                        std::to_string(faces_seen));
    case Stage::done:
      break;
  }
  return mesh;
}

Mesh parse_off_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_off(in);
}

Mesh load_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_off(in);
}

PointCloud sample_points(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    total += triangle_area2(mesh, t);
    cumulative.push_back(total);
  }
  if (mesh.triangles.empty() || !(total > 0.0)) {
    throw std::invalid_argument("mesh has no triangles with positive area");
  }
  if (n == 0) return {};

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::set<Vec3> seen;
  std::vector<Vec3> points;
  points.reserve(n);
  const std::size_t max_draws = 10 * n + 100;
  for (std::size_t draw = 0; draw < max_draws && points.size() < n; ++draw) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const double wa = 1.0 - r1;
    const double wb = r1 * (1.0 - r2);
    const double wc = r1 * r2;
    const auto& a = mesh.vertices[t[0]];
    const auto& b = mesh.vertices[t[1]];
    const auto& c = mesh.vertices[t[2]];
    const Vec3 p{static_cast<float>(wa * a[0] + wb * b[0] + wc * c[0]),
                 static_cast<float>(wa * a[1] + wb * b[1] + wc * c[1]),
                 static_cast<float>(wa * a[2] + wb * b[2] + wc * c[2])};
    if (seen.insert(p).second) points.push_back(p);
  }
  return PointCloud(std::move(points));
}

PointCloud normalize_unit_cube(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("cannot normalize an empty point cloud");
  std::array<double, 3> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const Vec3& p : cloud) {
    const double c[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (!(extent > 0.0)) return PointCloud({Vec3{0.5f, 0.5f, 0.5f}});

  std::array<double, 3> offset{};
  for (int a = 0; a < 3; ++a) offset[a] = 0.5 * (1.0 - (hi[a] - lo[a]) / extent);

  auto map = [&](float v, int a) {
    const double t = (static_cast<double>(v) - lo[a]) / extent + offset[a];
    return static_cast<float>(std::clamp(t, 0.0, 1.0));
  };
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back({map(p.x, 0), map(p.y, 1), map(p.z, 2)});
  return PointCloud(std::move(out));
}

VoxelGrid voxelize(const PointCloud& cloud, int resolution) {
  if (resolution < 2) throw std::invalid_argument("voxel resolution must be at least 2");
  VoxelGrid grid(resolution);
  auto index = [resolution](float v) {
    const auto i = static_cast<long>(std::floor(static_cast<double>(v) * resolution));
    return static_cast<int>(std::clamp<long>(i, 0, resolution - 1));
  };
  for (const Vec3& p : cloud) grid.set(index(p.x), index(p.y), index(p.z), 1.0f);
  return grid;
}

namespace {

constexpr std::array<std::string_view, kShapeKindCount> kShapeNames = {"sphere", "cube", "cylinder",
                                                                        "cone", "torus"};

using Point = std::array<double, 3>;

struct SurfaceSampler {
  ShapeKind kind;
  double height = 2.0;        // cylinder, cone
  double tube_radius = 0.35;  // torus (ring radius is 1)

  Point operator()(Rng& rng) const {
    constexpr double pi = std::numbers::pi;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    switch (kind) {
      case ShapeKind::sphere: {
        for (;;) {
          const Point g{gauss(rng), gauss(rng), gauss(rng)};
          const double r = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
          if (r > 1e-12) return {g[0] / r, g[1] / r, g[2] / r};
        }
      }
      case ShapeKind::cube: {
        const int face = static_cast<int>(unit(rng) * 6.0) % 6;
        const double u = 2.0 * unit(rng) - 1.0;
        const double v = 2.0 * unit(rng) - 1.0;
        const double s = face % 2 == 0 ? 1.0 : -1.0;
        switch (face / 2) {
          case 0: return {s, u, v};
          case 1: return {u, s, v};
          default: return {u, v, s};
        }
      }
      case ShapeKind::cylinder: {
        const double lateral = 2.0 * pi * height;
        const double caps = 2.0 * pi;
        const double theta = 2.0 * pi * unit(rng);
        if (unit(rng) * (lateral + caps) < lateral) {
          return {std::cos(theta), std::sin(theta), (unit(rng) - 0.5) * height};
        }
        const double r = std::sqrt(unit(rng));
        const double z = unit(rng) < 0.5 ? -0.5 * height : 0.5 * height;
        return {r * std::cos(theta), r * std::sin(theta), z};
      }
      case ShapeKind::cone: {
        const double lateral = pi * std::sqrt(1.0 + height * height);
        const double base = pi;
        const double theta = 2.0 * pi * unit(rng);
        if (unit(rng) * (lateral + base) < lateral) {
          const double t = std::sqrt(unit(rng));  // distance fraction from the apex
          return {t * std::cos(theta), t * std::sin(theta), 0.5 * height - t * height};
        }
        const double r = std::sqrt(unit(rng));
        return {r * std::cos(theta), r * std::sin(theta), -0.5 * height};
      }
      case ShapeKind::torus: {
        for (;;) {
          const double theta = 2.0 * pi * unit(rng);
          const double phi = 2.0 * pi * unit(rng);
          const double ring = 1.0 + tube_radius * std::cos(phi);
          if (unit(rng) * (1.0 + tube_radius) <= ring) {
            return {ring * std::cos(theta), ring * std::sin(theta), tube_radius * std::sin(phi)};
          }
        }
      }
    }
    throw std::logic_error("unhandled shape kind");
  }
};

}  // namespace

std::string_view shape_kind_name(ShapeKind kind) { return kShapeNames.at(static_cast<std::size_t>(kind)); }

std::optional<ShapeKind> shape_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i) {
    if (kShapeNames[i] == name) return static_cast<ShapeKind>(i);
  }
  return std::nullopt;
}

SyntheticShape synth_shape(ShapeKind kind, std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("synthetic shapes need at least 8 points");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("noise_sd must be non-negative");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSampler sampler{kind};
  sampler.height = 1.0 + 2.0 * unit(rng);
  sampler.tube_radius = 0.25 + 0.25 * unit(rng);
  std::normal_distribution<double> jitter(0.0, 1.0);

  std::set<Vec3> seen;
  std::vector<Vec3> raw;
  raw.reserve(n);
  for (std::size_t draw = 0; draw < 10 * n + 100 && raw.size() < n; ++draw) {
    Point p = sampler(rng);
    if (noise_sd > 0.0) {
      for (double& c : p) c += noise_sd * jitter(rng);
    }
    const Vec3 v{static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])};
    if (seen.insert(v).second) raw.push_back(v);
  }
  PointCloud cloud = normalize_unit_cube(PointCloud(std::move(raw)));
  return {std::move(cloud), kind, seed};
}

SyntheticShape synth_shape(std::string_view kind, std::size_t n, double noise_sd, std::uint64_t seed) {
  const auto parsed = shape_kind_from_name(kind);
  if (!parsed) throw std::invalid_argument("unknown shape kind '" + std::string(kind) + "'");
  return synth_shape(*parsed, n, noise_sd, seed);
}

}  // namespace iso3d
