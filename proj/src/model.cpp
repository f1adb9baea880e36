#include "iso3d/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "iso3d/binary_io.hpp"
#include "iso3d/error.hpp"
#include "iso3d/kernels.hpp"
#include "iso3d/rng.hpp"

namespace iso3d {

std::string_view family_name(Family family) {
  return family == Family::point_set ? "point-set" : "volumetric";
}

std::optional<Family> family_from_name(std::string_view name) {
  if (name == "point-set") return Family::point_set;
  if (name == "volumetric") return Family::volumetric;
  return std::nullopt;
}

std::size_t ModelSpec::latent_dim() const {
  if (family == Family::point_set) return point_widths.empty() ? 0 : static_cast<std::size_t>(point_widths.back());
  if (conv_stages.empty()) return 0;
  const std::size_t pooled = final_activation_extent() / static_cast<std::size_t>(conv_stages.back().pool);
  return static_cast<std::size_t>(conv_stages.back().filters) * pooled * pooled * pooled;
}

std::size_t ModelSpec::final_activation_extent() const {
  std::size_t extent = static_cast<std::size_t>(resolution);
  for (std::size_t i = 0; i + 1 < conv_stages.size(); ++i) extent /= static_cast<std::size_t>(conv_stages[i].pool);
  return extent;
}

std::size_t ModelSpec::final_downsample() const {
  const std::size_t extent = final_activation_extent();
  return extent == 0 ? 1 : static_cast<std::size_t>(resolution) / extent;
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model spec: " + what); };
  if (class_names.empty()) fail("no classes");
  for (const auto& name : class_names) {
    if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) fail("class names must be single words");
  }
  if (fc_widths.empty()) fail("no FCN layers");
  for (int w : fc_widths) {
    if (w <= 0) fail("FCN widths must be positive");
  }
  if (static_cast<std::size_t>(fc_widths.back()) != class_count()) fail("final FCN width must equal the class count");
  if (family == Family::point_set) {
    if (point_widths.empty()) fail("point-set model needs per-point layers");
    for (int w : point_widths) {
      if (w <= 0) fail("per-point widths must be positive");
    }
  } else {
    if (conv_stages.empty()) fail("volumetric model needs conv stages");
    if (resolution < 2) fail("resolution must be at least 2");
    std::size_t extent = static_cast<std::size_t>(resolution);
    for (const auto& stage : conv_stages) {
      if (stage.filters <= 0) fail("filter counts must be positive");
      if (stage.kernel <= 0 || stage.kernel % 2 == 0) fail("kernel sizes must be positive and odd");
      if (stage.pool <= 0) fail("pool windows must be positive");
      if (extent % static_cast<std::size_t>(stage.pool) != 0) fail("pool windows must divide the stage extent");
      extent /= static_cast<std::size_t>(stage.pool);
      if (extent == 0) fail("stages reduce the volume to nothing");
    }
  }
}

ModelSpec ModelSpec::desk_point_set(std::vector<std::string> classes) {
  ModelSpec spec;
  spec.family = Family::point_set;
  spec.point_widths = {32, 64};
  spec.fc_widths = {32, static_cast<int>(classes.size())};
  spec.class_names = std::move(classes);
  return spec;
}

ModelSpec ModelSpec::desk_volumetric(std::vector<std::string> classes) {
  ModelSpec spec;
  spec.family = Family::volumetric;
  spec.resolution = 16;
  spec.conv_stages = {{8, 3, 2}, {8, 3, 2}};
  spec.fc_widths = {32, static_cast<int>(classes.size())};
  spec.class_names = std::move(classes);
  return spec;
}

void write_model_spec(std::ostream& out, const ModelSpec& spec) {
  out << "family " << family_name(spec.family) << '\n';
  out << "classes";
  for (const auto& name : spec.class_names) out << ' ' << name;
  out << '\n';
  if (spec.family == Family::point_set) {
    out << "point_widths";
    for (int w : spec.point_widths) out << ' ' << w;
    out << '\n';
  } else {
    out << "resolution " << spec.resolution << '\n';
    for (const auto& stage : spec.conv_stages) {
      out << "conv " << stage.filters << ' ' << stage.kernel << ' ' << stage.pool << '\n';
    }
  }
  out << "fc_widths";
  for (int w : spec.fc_widths) out << ' ' << w;
  out << '\n';
}

ModelSpec read_model_spec(std::istream& in) {
  ModelSpec spec;
  spec.point_widths.clear();
  std::size_t line_no = 0;
  bool have_family = false;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    std::istringstream fields(line);
    std::string key;
    if (!(fields >> key)) continue;
    auto ints = [&]() {
      std::vector<int> values;
      int v = 0;
      while (fields >> v) values.push_back(v);
      if (!fields.eof()) throw ParseError(line_no, "expected integers after '" + key + "'");
      return values;
    };
    if (key == "family") {
      std::string name;
      fields >> name;
      const auto family = family_from_name(name);
      if (!family) throw ParseError(line_no, "unknown family '" + name + "'");
      spec.family = *family;
      have_family = true;
    } else if (key == "classes") {
      for (std::string name; fields >> name;) spec.class_names.push_back(name);
    } else if (key == "point_widths") {
      spec.point_widths = ints();
    } else if (key == "resolution") {
      const auto v = ints();
      if (v.size() != 1) throw ParseError(line_no, "resolution takes one value");
      spec.resolution = v[0];
    } else if (key == "conv") {
      const auto v = ints();
      if (v.size() != 3) throw ParseError(line_no, "conv takes filters, kernel, pool");
      spec.conv_stages.push_back({v[0], v[1], v[2]});
    } else if (key == "fc_widths") {
      spec.fc_widths = ints();
    } else {
      throw ParseError(line_no, "unknown key '" + key + "'");
    }
  }
  if (!have_family) throw ParseError(line_no + 1, "missing 'family' record");
  spec.validate();
  return spec;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return {std::move(shape), std::vector<float>(n, 0.0f)};
}

const Tensor* Weights::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

const Tensor& Weights::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ShapeError("missing tensor '" + std::string(name) + "'");
}

std::vector<TensorSlot> weight_layout(const ModelSpec& spec) {
  std::vector<TensorSlot> slots;
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    slots.push_back({prefix + ".weight", {out, in}, in});
    slots.push_back({prefix + ".bias", {out}, in});
  };
  std::size_t width = 0;
  if (spec.family == Family::point_set) {
    width = 3;
    for (std::size_t i = 0; i < spec.point_widths.size(); ++i) {
      const auto out = static_cast<std::size_t>(spec.point_widths[i]);
      dense("point." + std::to_string(i), width, out);
      width = out;
    }
  } else {
    std::size_t channels = 1;
    for (std::size_t i = 0; i < spec.conv_stages.size(); ++i) {
      const auto& s = spec.conv_stages[i];
      const auto k = static_cast<std::size_t>(s.kernel);
      const auto f = static_cast<std::size_t>(s.filters);
      const std::string prefix = "conv." + std::to_string(i);
      slots.push_back({prefix + ".weight", {f, channels, k, k, k}, channels * k * k * k});
      slots.push_back({prefix + ".bias", {f}, channels * k * k * k});
      channels = f;
    }
    width = spec.latent_dim();
  }
  for (std::size_t i = 0; i < spec.fc_widths.size(); ++i) {
    const auto out = static_cast<std::size_t>(spec.fc_widths[i]);
    dense("fc." + std::to_string(i), width, out);
    width = out;
  }
  return slots;
}

Weights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<NamedTensor> tensors;
  for (const auto& slot : weight_layout(spec)) {
    Tensor t = Tensor::zeros(slot.shape);
    if (slot.shape.size() > 1) {
      const double limit = std::sqrt(6.0 / static_cast<double>(slot.fan_in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (float& v : t.data) v = static_cast<float>(dist(rng));
    }
    tensors.push_back({slot.name, std::move(t)});
  }
  return Weights(std::move(tensors));
}

namespace {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

void check_weights(const ModelSpec& spec, const Weights& weights) {
  for (const auto& slot : weight_layout(spec)) {
    const Tensor* t = weights.find(slot.name);
    if (!t) throw ShapeError("missing tensor '" + slot.name + "'");
    if (t->shape != slot.shape) {
      throw ShapeError("tensor '" + slot.name + "' has shape " + shape_string(t->shape) + ", expected " +
                       shape_string(slot.shape));
    }
    std::size_t n = 1;
    for (std::size_t d : t->shape) n *= d;
    if (t->data.size() != n) throw ShapeError("tensor '" + slot.name + "' data length disagrees with its shape");
    for (float v : t->data) {
      if (!std::isfinite(v)) throw ShapeError("tensor '" + slot.name + "' holds a non-finite value");
    }
  }
}

void write_weights(std::ostream& out, const Weights& weights) {
  out.write("W3DR", 4);
  binary::put_uint<std::uint32_t>(out, 1);
  binary::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(weights.tensors().size()));
  for (const auto& [name, tensor] : weights.tensors()) {
    if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
    if (tensor.shape.size() > 0xff) throw std::invalid_argument("tensor rank too large");
    binary::put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) binary::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.data) binary::put_f32(out, v);
  }
}

Weights read_weights(std::istream& in) {
  binary::expect_magic(in, "W3DR");
  const auto version = binary::get_uint<std::uint32_t>(in, "version");
  if (version != 1) throw FormatError("unsupported weight file version " + std::to_string(version));
  const auto count = binary::get_uint<std::uint32_t>(in, "tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = binary::get_uint<std::uint16_t>(in, "name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated payload reading tensor name");
    const auto rank = binary::get_uint<std::uint8_t>(in, "rank");
    std::vector<std::size_t> shape;
    std::uint64_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      shape.push_back(binary::get_uint<std::uint32_t>(in, "dimension"));
      n *= shape.back();
      if (n > (1ull << 32)) throw FormatError("tensor '" + name + "' is implausibly large");
    }
    Tensor tensor{shape, {}};
    tensor.data.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
    for (std::uint64_t i = 0; i < n; ++i) tensor.data.push_back(binary::get_f32(in, "tensor data"));
    tensors.push_back({std::move(name), std::move(tensor)});
  }
  return Weights(std::move(tensors));
}

void save_weights(const std::filesystem::path& path, const Weights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_weights(out, weights);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Weights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_weights(in);
}

Weights load_weights(const std::filesystem::path& path, const ModelSpec& spec) {
  Weights weights = load_weights(path);
  check_weights(spec, weights);
  return weights;
}

std::filesystem::path spec_path_for(const std::filesystem::path& weights_path) {
  auto p = weights_path;
  p.replace_extension(".spec");
  return p;
}

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Prediction predict(const ForwardTrace& trace) {
  const std::size_t label = argmax(trace.logits);
  return {label, trace.probs[label]};
}

Network::Network(ModelSpec spec, Weights weights) : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  check_weights(spec_, weights_);
  bind();
}

void Network::bind() {
  auto index_of = [&](const std::string& name) {
    const auto& ts = weights_.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].name == name) return i;
    }
    throw ShapeError("missing tensor '" + name + "'");
  };
  std::size_t width = 3;
  if (spec_.family == Family::point_set) {
    for (std::size_t i = 0; i < spec_.point_widths.size(); ++i) {
      const std::string prefix = "point." + std::to_string(i);
      const auto out = static_cast<std::size_t>(spec_.point_widths[i]);
      point_layers_.push_back({index_of(prefix + ".weight"), index_of(prefix + ".bias"), width, out});
      width = out;
    }
  } else {
    std::size_t channels = 1;
    std::size_t extent = static_cast<std::size_t>(spec_.resolution);
    for (std::size_t i = 0; i < spec_.conv_stages.size(); ++i) {
      const auto& s = spec_.conv_stages[i];
      const std::string prefix = "conv." + std::to_string(i);
      conv_layers_.push_back({index_of(prefix + ".weight"), index_of(prefix + ".bias"), channels,
                              static_cast<std::size_t>(s.filters), static_cast<std::size_t>(s.kernel), extent,
                              static_cast<std::size_t>(s.pool)});
      channels = static_cast<std::size_t>(s.filters);
      extent /= static_cast<std::size_t>(s.pool);
    }
    width = spec_.latent_dim();
  }
  for (std::size_t i = 0; i < spec_.fc_widths.size(); ++i) {
    const std::string prefix = "fc." + std::to_string(i);
    const auto out = static_cast<std::size_t>(spec_.fc_widths[i]);
    fc_layers_.push_back({index_of(prefix + ".weight"), index_of(prefix + ".bias"), width, out});
    width = out;
  }
}

void Network::point_features(const Vec3& point, std::span<float> out) const {
  if (spec_.family != Family::point_set) throw ShapeError("point features need a point-set model");
  std::vector<float> a{point.x, point.y, point.z};
  std::vector<float> b;
  for (const auto& layer : point_layers_) {
    b.assign(layer.out, 0.0f);
    kernels::dense_forward<float>(a, 1, layer.in, tensor(layer.weight), tensor(layer.bias), layer.out, b);
    kernels::relu_inplace<float>(b);
    a.swap(b);
  }
  if (out.size() != a.size()) throw ShapeError("latent row buffer has the wrong size");
  std::copy(a.begin(), a.end(), out.begin());
}

std::vector<float> Network::head(std::span<const float> pooled) const {
  if (pooled.size() != spec_.latent_dim()) throw ShapeError("pooled latent has the wrong size");
  std::vector<float> a(pooled.begin(), pooled.end());
  std::vector<float> b;
  for (std::size_t i = 0; i < fc_layers_.size(); ++i) {
    const auto& layer = fc_layers_[i];
    b.assign(layer.out, 0.0f);
    kernels::dense_forward<float>(a, 1, layer.in, tensor(layer.weight), tensor(layer.bias), layer.out, b);
    if (i + 1 < fc_layers_.size()) kernels::relu_inplace<float>(b);
    a.swap(b);
  }
  return a;
}

ForwardTrace Network::finish(std::vector<float> pooled) const {
  ForwardTrace trace;
  trace.logits = head(pooled);
  trace.pooled_latent = std::move(pooled);
  trace.probs.assign(trace.logits.size(), 0.0f);
  kernels::softmax<float>(trace.logits, trace.probs);
  return trace;
}

ForwardTrace Network::forward(const PointCloud& cloud) const {
  if (spec_.family != Family::point_set) throw ShapeError("a volumetric model cannot take a point cloud");
  if (cloud.empty()) throw std::invalid_argument("cannot run a point-set model on an empty cloud");
  const std::size_t n = cloud.size();
  std::vector<float> a;
  a.reserve(n * 3);
  for (const Vec3& p : cloud) a.insert(a.end(), {p.x, p.y, p.z});
  std::vector<float> b;
  for (const auto& layer : point_layers_) {
    b.assign(n * layer.out, 0.0f);
    kernels::dense_forward<float>(a, n, layer.in, tensor(layer.weight), tensor(layer.bias), layer.out, b);
    kernels::relu_inplace<float>(b);
    a.swap(b);
  }
  const std::size_t latent = spec_.latent_dim();
  std::vector<float> pooled(latent);
  std::vector<std::uint32_t> arg(latent);
  kernels::max_rows<float>(a, n, latent, pooled, arg);
  ForwardTrace trace = finish(std::move(pooled));
  trace.rows = n;
  trace.per_point_latent = std::move(a);
  return trace;
}

VolumeTrace Network::volume_features(const VoxelGrid& grid, std::vector<float>& pooled) const {
  if (spec_.family != Family::volumetric) throw ShapeError("a point-set model cannot take a voxel grid");
  if (grid.resolution() != spec_.resolution) {
    throw ShapeError("voxel grid resolution " + std::to_string(grid.resolution()) + " does not match model resolution " +
                     std::to_string(spec_.resolution));
  }
  std::vector<float> a(grid.occupancy().begin(), grid.occupancy().end());
  std::vector<float> b;
  VolumeTrace trace;
  for (std::size_t i = 0; i < conv_layers_.size(); ++i) {
    const auto& c = conv_layers_[i];
    const kernels::ConvShape shape{c.channels, c.filters, c.extent, c.kernel};
    const std::size_t vol = c.extent * c.extent * c.extent;
    b.assign(c.filters * vol, 0.0f);
    kernels::conv3d_forward<float>(shape, a, tensor(c.weight), tensor(c.bias), b);
    kernels::relu_inplace<float>(b);
    const std::size_t o = c.extent / c.pool;
    std::vector<float> out(c.filters * o * o * o);
    std::vector<std::uint32_t> arg(out.size());
    kernels::maxpool3d_forward<float>(c.filters, c.extent, c.pool, b, out, arg);
    if (i + 1 == conv_layers_.size()) {
      trace.filters = c.filters;
      trace.extent = c.extent;
      trace.pool = c.pool;
      trace.downsample = spec_.final_downsample();
      trace.activations = std::move(b);
    }
    a = std::move(out);
  }
  pooled = std::move(a);
  return trace;
}

ForwardTrace Network::forward(const VoxelGrid& grid) const {
  std::vector<float> pooled;
  VolumeTrace volume = volume_features(grid, pooled);
  ForwardTrace trace = finish(std::move(pooled));
  trace.volume = std::move(volume);
  return trace;
}

ForwardTrace Network::forward(const ModelInput& input) const {
  return std::visit([this](const auto& x) { return forward(x); }, input);
}

Prediction predict(const Network& net, const ModelInput& input) { return predict(net.forward(input)); }

bool fcn_weights_nonzero(const Network& net) {
  for (std::size_t i = 0; i < net.spec().fc_widths.size(); ++i) {
    for (float v : net.weights().at("fc." + std::to_string(i) + ".weight").data) {
      if (v == 0.0f) return false;
    }
  }
  return true;
}

void save_network(const std::filesystem::path& weights_path, const Network& net) {
  save_weights(weights_path, net.weights());
  std::ofstream out(spec_path_for(weights_path));
  if (!out) throw std::runtime_error("cannot write " + spec_path_for(weights_path).string());
  write_model_spec(out, net.spec());
}

Network load_network(const std::filesystem::path& weights_path) {
  std::ifstream in(spec_path_for(weights_path));
  if (!in) throw std::runtime_error("cannot open " + spec_path_for(weights_path).string());
  ModelSpec spec = read_model_spec(in);
  Weights weights = load_weights(weights_path, spec);
  return Network(std::move(spec), std::move(weights));
}

}  // namespace iso3d
