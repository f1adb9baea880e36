#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "iso3d/geometry.hpp"

namespace iso3d {

enum class Family { point_set, volumetric };

std::string_view family_name(Family family);
std::optional<Family> family_from_name(std::string_view name);

struct ConvStage {
  int filters = 8;
  int kernel = 3;  ///< odd; stride 1 with "same" zero padding
  int pool = 2;    ///< non-overlapping cubic max-pool window

  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

/// Architecture description for both pipeline families:
///   point-set:  shared per-point MLP (ReLU) -> max over points -> FCN
///   volumetric: (conv3d, ReLU, maxpool3d)* -> flatten -> FCN
/// FCN hidden layers use ReLU; the last FCN width is the class count.
struct ModelSpec {
  Family family = Family::point_set;
  std::vector<std::string> class_names;
  std::vector<int> point_widths;  ///< point-set only; the last width is the latent dimension
  std::vector<ConvStage> conv_stages;  ///< volumetric only
  int resolution = 16;                 ///< volumetric only
  std::vector<int> fc_widths;

  std::size_t class_count() const noexcept { return class_names.size(); }
  std::size_t latent_dim() const;
  /// Side length of the final conv stage's pre-pool activation volume.
  std::size_t final_activation_extent() const;
  /// Input voxels per final-stage activation cell along one axis.
  std::size_t final_downsample() const;

  void validate() const;

  static ModelSpec desk_point_set(std::vector<std::string> classes);
  static ModelSpec desk_volumetric(std::vector<std::string> classes);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Sidecar text format: one `key value...` record per line.
void write_model_spec(std::ostream& out, const ModelSpec& spec);
ModelSpec read_model_spec(std::istream& in);

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  static Tensor zeros(std::vector<std::size_t> shape);
  std::size_t size() const noexcept { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Named layer tensors in layout order (see weight_layout).
class Weights {
 public:
  Weights() = default;
  explicit Weights(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {}

  const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }
  std::vector<NamedTensor>& tensors() noexcept { return tensors_; }
  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;

  friend bool operator==(const Weights&, const Weights&) = default;

 private:
  std::vector<NamedTensor> tensors_;
};

struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t fan_in;
};

/// Every tensor a spec needs, in canonical order: point.i / conv.i layers,
/// then fc.i, each as weight followed by bias.
std::vector<TensorSlot> weight_layout(const ModelSpec& spec);

/// Fan-in scaled uniform kernels (limit sqrt(6 / fan_in)), zero biases.
Weights init_weights(const ModelSpec& spec, std::uint64_t seed);

/// Throws ShapeError naming the first missing or mis-shaped tensor.
void check_weights(const ModelSpec& spec, const Weights& weights);

// W3DR weight file: magic, u32 version=1, u32 count, then per tensor
// u16 name length, name, u8 rank, rank * u32 dims, row-major f32 values.
void write_weights(std::ostream& out, const Weights& weights);
Weights read_weights(std::istream& in);
void save_weights(const std::filesystem::path& path, const Weights& weights);
Weights load_weights(const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path, const ModelSpec& spec);

/// The sidecar path for a weight file: same stem, `.spec` extension.
std::filesystem::path spec_path_for(const std::filesystem::path& weights_path);

struct VolumeTrace {
  std::size_t filters = 0;
  std::size_t extent = 0;      ///< side of the final pre-pool activation volume
  std::size_t pool = 1;        ///< final pooling window
  std::size_t downsample = 1;  ///< input voxels per activation cell, per axis
  std::vector<float> activations;  ///< [filter][z][y][x], post-ReLU, pre-pool
};

struct ForwardTrace {
  std::vector<float> logits;
  std::vector<float> probs;
  std::size_t rows = 0;                  ///< point-set: number of points
  std::vector<float> per_point_latent;   ///< point-set: rows x latent_dim
  std::vector<float> pooled_latent;
  VolumeTrace volume;                    ///< volumetric only

  std::span<const float> latent_row(std::size_t i) const {
    return std::span<const float>(per_point_latent).subspan(i * pooled_latent.size(), pooled_latent.size());
  }
};

struct Prediction {
  std::size_t label = 0;
  float confidence = 0.0f;
};

/// Lowest index wins ties.
std::size_t argmax(std::span<const float> values);
Prediction predict(const ForwardTrace& trace);

using ModelInput = std::variant<PointCloud, VoxelGrid>;

/// Immutable spec + weights with resolved layer views; forward is const and
/// safe to call concurrently.
class Network {
 public:
  Network(ModelSpec spec, Weights weights);

  const ModelSpec& spec() const noexcept { return spec_; }
  const Weights& weights() const noexcept { return weights_; }
  Family family() const noexcept { return spec_.family; }

  ForwardTrace forward(const PointCloud& cloud) const;
  ForwardTrace forward(const VoxelGrid& grid) const;
  ForwardTrace forward(const ModelInput& input) const;

  /// The shared per-point MLP applied to one point (row of the latent matrix).
  void point_features(const Vec3& point, std::span<float> out) const;
  /// The FCN: pooled latent to logits.
  std::vector<float> head(std::span<const float> pooled) const;
  /// Conv stages up to (not including) the final pool, plus the pooled latent.
  VolumeTrace volume_features(const VoxelGrid& grid, std::vector<float>& pooled) const;

 private:
  // Indices into weights_.tensors(), so copies stay valid.
  struct Dense {
    std::size_t weight;
    std::size_t bias;
    std::size_t in;
    std::size_t out;
  };
  struct Conv {
    std::size_t weight;
    std::size_t bias;
    std::size_t channels;
    std::size_t filters;
    std::size_t kernel;
    std::size_t extent;
    std::size_t pool;
  };

  ModelSpec spec_;
  Weights weights_;
  std::vector<Dense> point_layers_;
  std::vector<Conv> conv_layers_;
  std::vector<Dense> fc_layers_;

  void bind();
  std::span<const float> tensor(std::size_t index) const { return weights_.tensors()[index].tensor.data; }
  ForwardTrace finish(std::vector<float> pooled) const;
};

Prediction predict(const Network& net, const ModelInput& input);

/// True when every FCN kernel entry is non-zero (precondition for black-box
/// critical-set recovery on point-set models).
bool fcn_weights_nonzero(const Network& net);

/// Saves weights plus the `.spec` sidecar; load_network reads both.
void save_network(const std::filesystem::path& weights_path, const Network& net);
Network load_network(const std::filesystem::path& weights_path);

}  // namespace iso3d
