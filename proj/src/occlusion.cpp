#include "iso3d/occlusion.hpp"

#include <stdexcept>

#include "iso3d/error.hpp"
#include "iso3d/kernels.hpp"
#include "iso3d/shapes.hpp"

namespace iso3d {

void Survivors::remove(std::uint32_t e) {
  if (!alive_.at(e)) throw std::logic_error("element already removed");
  alive_[e] = 0;
  --count_;
}

void Survivors::restore(std::uint32_t e) {
  if (alive_.at(e)) throw std::logic_error("element already present");
  alive_[e] = 1;
  ++count_;
}

Survivors Survivors::without(std::uint32_t e) const {
  Survivors s = *this;
  s.remove(e);
  return s;
}

Survivors Survivors::with(std::uint32_t e) const {
  Survivors s = *this;
  s.restore(e);
  return s;
}

std::vector<std::uint32_t> Survivors::indices() const {
  std::vector<std::uint32_t> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < alive_.size(); ++i) {
    if (alive_[i]) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

OcclusionInput OcclusionInput::from_cloud(PointCloud cloud) {
  OcclusionInput in;
  in.family_ = Family::point_set;
  in.cloud_ = std::move(cloud);
  return in;
}

OcclusionInput OcclusionInput::from_grid(VoxelGrid grid) {
  OcclusionInput in;
  in.family_ = Family::volumetric;
  in.cells_ = grid.occupied_cells();
  in.grid_ = std::move(grid);
  return in;
}

OcclusionInput OcclusionInput::for_model(const ModelSpec& spec, const PointCloud& cloud) {
  if (spec.family == Family::point_set) return from_cloud(cloud);
  return from_grid(voxelize(cloud, spec.resolution));
}

Vec3 OcclusionInput::position(std::uint32_t element) const {
  if (family_ == Family::point_set) return cloud_[element];
  return grid_.cell_center(cells_.at(element));
}

ModelInput OcclusionInput::materialize(const Survivors& survivors) const {
  if (survivors.elements() != size()) throw ShapeError("survivor mask does not match the input");
  const auto kept = survivors.indices();
  if (family_ == Family::point_set) return cloud_.subset(kept);
  VoxelGrid grid(grid_.resolution());
  for (std::uint32_t e : kept) grid.set_linear(cells_[e], grid_.occupancy()[cells_[e]]);
  return grid;
}

Observation observe(const ForwardTrace& trace) { return {trace.logits, trace.probs, predict(trace)}; }

QueryOracle::QueryOracle(const Network& net, const OcclusionInput& input) : net_(&net), input_(&input) {
  if (net.family() != input.family()) throw ShapeError("model family does not match the input family");
  if (input.family() == Family::point_set) {
    latent_ = net.spec().latent_dim();
    rows_.resize(input.size() * latent_);
    for (std::size_t i = 0; i < input.size(); ++i) {
      net.point_features(input.cloud()[i], std::span<float>(rows_).subspan(i * latent_, latent_));
    }
  } else if (input.grid().resolution() != net.spec().resolution) {
    throw ShapeError("voxel grid resolution does not match the model");
  }
}

ForwardTrace QueryOracle::run(const Survivors& survivors, bool with_rows) {
  if (survivors.elements() != input_->size()) throw ShapeError("survivor mask does not match the input");
  if (survivors.count() == 0) throw std::invalid_argument("cannot query an empty input");
  const auto start = std::chrono::steady_clock::now();
  ++queries_;
  ForwardTrace trace;
  if (input_->family() == Family::point_set) {
    const auto kept = survivors.indices();
    std::vector<float> gathered;
    gathered.reserve(kept.size() * latent_);
    for (std::uint32_t e : kept) {
      gathered.insert(gathered.end(), rows_.begin() + static_cast<std::ptrdiff_t>(e * latent_),
                      rows_.begin() + static_cast<std::ptrdiff_t>((e + 1) * latent_));
    }
    std::vector<float> pooled(latent_);
    std::vector<std::uint32_t> arg(latent_);
    kernels::max_rows<float>(gathered, kept.size(), latent_, pooled, arg);
    trace.logits = net_->head(pooled);
    trace.probs.assign(trace.logits.size(), 0.0f);
    kernels::softmax<float>(trace.logits, trace.probs);
    trace.pooled_latent = std::move(pooled);
    if (with_rows) {
      trace.rows = kept.size();
      trace.per_point_latent = std::move(gathered);
    }
  } else {
    trace = net_->forward(std::get<VoxelGrid>(input_->materialize(survivors)));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  max_query_seconds_ = std::max(max_query_seconds_, seconds);
  return trace;
}

Observation QueryOracle::observe(const Survivors& survivors) { return iso3d::observe(run(survivors, false)); }

ForwardTrace QueryOracle::trace(const Survivors& survivors) { return run(survivors, true); }

}  // namespace iso3d
