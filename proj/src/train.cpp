#include "iso3d/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "iso3d/error.hpp"
#include "iso3d/kernels.hpp"
#include "iso3d/rng.hpp"
#include "iso3d/shapes.hpp"

namespace iso3d {

template <typename T>
Parameters<T> to_parameters(const ModelSpec& spec, const Weights& weights) {
  check_weights(spec, weights);
  Parameters<T> params;
  for (const auto& slot : weight_layout(spec)) {
    const auto& data = weights.at(slot.name).data;
    params.tensors.emplace_back(data.begin(), data.end());
  }
  return params;
}

Weights to_weights(const ModelSpec& spec, const Parameters<float>& params) {
  const auto layout = weight_layout(spec);
  if (layout.size() != params.tensors.size()) throw ShapeError("parameter count does not match the spec");
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    tensors.push_back({layout[i].name, Tensor{layout[i].shape, params.tensors[i]}});
  }
  Weights weights(std::move(tensors));
  check_weights(spec, weights);
  return weights;
}

template <typename T>
Parameters<T> zeros_like(const Parameters<T>& params) {
  Parameters<T> out;
  for (const auto& t : params.tensors) out.tensors.emplace_back(t.size(), T(0));
  return out;
}

namespace {

template <typename T>
std::span<T> grad_slot(Parameters<T>* grad, std::size_t i) {
  return std::span<T>(grad->tensors[i]);
}

// FCN forward/backward shared by both families. `first` is the index of
// fc.0.weight in the parameter list.
template <typename T>
struct Head {
  std::vector<std::vector<T>> acts;  // acts[0] = pooled input, acts[i+1] = layer i output

  std::span<const T> run(const ModelSpec& spec, const Parameters<T>& p, std::size_t first, std::vector<T> pooled) {
    acts.clear();
    acts.push_back(std::move(pooled));
    for (std::size_t i = 0; i < spec.fc_widths.size(); ++i) {
      const std::size_t in = acts.back().size();
      const auto out = static_cast<std::size_t>(spec.fc_widths[i]);
      std::vector<T> y(out);
      kernels::dense_forward<T>(acts.back(), 1, in, p.tensors[first + 2 * i], p.tensors[first + 2 * i + 1], out, y);
      if (i + 1 < spec.fc_widths.size()) kernels::relu_inplace<T>(y);
      acts.push_back(std::move(y));
    }
    return acts.back();
  }

  std::vector<T> backward(const ModelSpec& spec, const Parameters<T>& p, std::size_t first, std::vector<T> d_out,
                          Parameters<T>* grad) {
    for (std::size_t i = spec.fc_widths.size(); i-- > 0;) {
      const std::size_t in = acts[i].size();
      const std::size_t out = acts[i + 1].size();
      std::vector<T> d_in(in);
      kernels::dense_backward<T>(acts[i], 1, in, p.tensors[first + 2 * i], out, d_out, d_in,
                                 grad_slot(grad, first + 2 * i), grad_slot(grad, first + 2 * i + 1));
      if (i > 0) kernels::relu_backward<T>(acts[i], d_in);
      d_out = std::move(d_in);
    }
    return d_out;
  }
};

template <typename T>
std::size_t argmax_of(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T>
T point_set_loss(const ModelSpec& spec, const Parameters<T>& p, const PointCloud& cloud, std::size_t label,
                 Parameters<T>* grad, std::size_t* predicted) {
  if (cloud.empty()) throw std::invalid_argument("cannot train on an empty cloud");
  const std::size_t n = cloud.size();
  const std::size_t layers = spec.point_widths.size();
  std::vector<std::vector<T>> acts(layers + 1);
  for (const Vec3& pt : cloud) acts[0].insert(acts[0].end(), {T(pt.x), T(pt.y), T(pt.z)});
  std::size_t width = 3;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto out = static_cast<std::size_t>(spec.point_widths[l]);
    acts[l + 1].assign(n * out, T(0));
    kernels::dense_forward<T>(acts[l], n, width, p.tensors[2 * l], p.tensors[2 * l + 1], out, acts[l + 1]);
    kernels::relu_inplace<T>(acts[l + 1]);
    width = out;
  }
  std::vector<T> pooled(width);
  std::vector<std::uint32_t> arg(width);
  kernels::max_rows<T>(acts[layers], n, width, pooled, arg);

  Head<T> head;
  const std::size_t first = 2 * layers;
  const auto logits = head.run(spec, p, first, std::move(pooled));
  std::vector<T> d_logits(logits.size());
  const T loss = kernels::cross_entropy<T>(logits, label, d_logits);
  if (predicted) *predicted = argmax_of(logits);
  if (!grad) return loss;

  const std::vector<T> d_pooled = head.backward(spec, p, first, std::move(d_logits), grad);
  std::vector<T> d(n * width);
  kernels::max_rows_backward<T>(d_pooled, arg, width, d);
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t out = static_cast<std::size_t>(spec.point_widths[l]);
    const std::size_t in = l == 0 ? 3 : static_cast<std::size_t>(spec.point_widths[l - 1]);
    kernels::relu_backward<T>(acts[l + 1], d);
    std::vector<T> d_in(l == 0 ? 0 : n * in);
    kernels::dense_backward<T>(acts[l], n, in, p.tensors[2 * l], out, d, d_in, grad_slot(grad, 2 * l),
                               grad_slot(grad, 2 * l + 1));
    d = std::move(d_in);
  }
  return loss;
}

template <typename T>
T volumetric_loss(const ModelSpec& spec, const Parameters<T>& p, const VoxelGrid& grid, std::size_t label,
                  Parameters<T>* grad, std::size_t* predicted) {
  if (grid.resolution() != spec.resolution) throw ShapeError("voxel grid resolution does not match the model");
  struct StageCache {
    kernels::ConvShape shape;
    std::size_t pool;
    std::vector<T> input;
    std::vector<T> activated;
    std::vector<std::uint32_t> arg;
  };
  std::vector<StageCache> stages;
  std::vector<T> a(grid.occupancy().begin(), grid.occupancy().end());
  std::size_t channels = 1;
  std::size_t extent = static_cast<std::size_t>(spec.resolution);
  for (std::size_t i = 0; i < spec.conv_stages.size(); ++i) {
    const auto& s = spec.conv_stages[i];
    StageCache c{{channels, static_cast<std::size_t>(s.filters), extent, static_cast<std::size_t>(s.kernel)},
                 static_cast<std::size_t>(s.pool), std::move(a), {}, {}};
    const std::size_t vol = extent * extent * extent;
    c.activated.assign(c.shape.filters * vol, T(0));
    kernels::conv3d_forward<T>(c.shape, c.input, p.tensors[2 * i], p.tensors[2 * i + 1], c.activated);
    kernels::relu_inplace<T>(c.activated);
    const std::size_t o = extent / c.pool;
    a.assign(c.shape.filters * o * o * o, T(0));
    c.arg.assign(a.size(), 0);
    kernels::maxpool3d_forward<T>(c.shape.filters, extent, c.pool, c.activated, a, c.arg);
    channels = c.shape.filters;
    extent = o;
    stages.push_back(std::move(c));
  }

  Head<T> head;
  const std::size_t first = 2 * spec.conv_stages.size();
  const auto logits = head.run(spec, p, first, std::move(a));
  std::vector<T> d_logits(logits.size());
  const T loss = kernels::cross_entropy<T>(logits, label, d_logits);
  if (predicted) *predicted = argmax_of(logits);
  if (!grad) return loss;

  std::vector<T> d = head.backward(spec, p, first, std::move(d_logits), grad);
  for (std::size_t i = stages.size(); i-- > 0;) {
    auto& c = stages[i];
    std::vector<T> d_act(c.activated.size());
    kernels::maxpool3d_backward<T>(c.shape.filters, c.shape.extent, c.pool, d, c.arg, d_act);
    kernels::relu_backward<T>(c.activated, d_act);
    std::vector<T> d_in(i == 0 ? 0 : c.input.size());
    kernels::conv3d_backward<T>(c.shape, c.input, p.tensors[2 * i], d_act, d_in, grad_slot(grad, 2 * i),
                                grad_slot(grad, 2 * i + 1));
    d = std::move(d_in);
  }
  return loss;
}

}  // namespace

template <typename T>
T loss_and_gradient(const ModelSpec& spec, const Parameters<T>& params, const ModelInput& input, std::size_t label,
                    Parameters<T>* grad, std::size_t* predicted) {
  if (label >= spec.class_count()) throw std::invalid_argument("label out of range");
  if (spec.family == Family::point_set) {
    const auto* cloud = std::get_if<PointCloud>(&input);
    if (!cloud) throw ShapeError("a point-set model needs a point cloud");
    return point_set_loss(spec, params, *cloud, label, grad, predicted);
  }
  const auto* grid = std::get_if<VoxelGrid>(&input);
  if (!grid) throw ShapeError("a volumetric model needs a voxel grid");
  return volumetric_loss(spec, params, *grid, label, grad, predicted);
}

template Parameters<float> to_parameters<float>(const ModelSpec&, const Weights&);
template Parameters<double> to_parameters<double>(const ModelSpec&, const Weights&);
template Parameters<float> zeros_like<float>(const Parameters<float>&);
template Parameters<double> zeros_like<double>(const Parameters<double>&);
template float loss_and_gradient<float>(const ModelSpec&, const Parameters<float>&, const ModelInput&, std::size_t,
                                        Parameters<float>*, std::size_t*);
template double loss_and_gradient<double>(const ModelSpec&, const Parameters<double>&, const ModelInput&,
                                          std::size_t, Parameters<double>*, std::size_t*);

ModelInput make_input(const ModelSpec& spec, const PointCloud& cloud) {
  if (spec.family == Family::point_set) return cloud;
  return voxelize(cloud, spec.resolution);
}

double accuracy(const Network& net, const std::vector<LabeledExample>& examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    if (predict(net, make_input(net.spec(), ex.input)).label == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainOptions& options,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  spec.validate();
  dataset.validate();
  if (dataset.train.empty()) throw std::invalid_argument("training set is empty");
  if (dataset.class_count() != spec.class_count()) {
    throw std::invalid_argument("dataset and model disagree on the class count");
  }
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be positive");

  std::vector<ModelInput> inputs;
  inputs.reserve(dataset.train.size());
  for (const auto& ex : dataset.train) inputs.push_back(make_input(spec, ex.input));

  Parameters<float> params = to_parameters<float>(spec, init_weights(spec, mix_seed(options.seed, 0)));
  Parameters<float> velocity = zeros_like(params);
  Rng rng(mix_seed(options.seed, 1));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  const auto lr = static_cast<float>(options.learning_rate);
  const auto momentum = static_cast<float>(options.momentum);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      Parameters<float> grad = zeros_like(params);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        std::size_t predicted = 0;
        const float loss =
            loss_and_gradient<float>(spec, params, inputs[idx], dataset.train[idx].label, &grad, &predicted);
        if (!std::isfinite(loss)) throw DivergenceError(epoch, "non-finite training loss");
        loss_sum += loss;
        if (predicted == dataset.train[idx].label) ++correct;
      }
      const float scale = 1.0f / static_cast<float>(stop - start);
      for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto& w = params.tensors[t];
        auto& v = velocity.tensors[t];
        const auto& g = grad.tensors[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = momentum * v[i] + g[i] * scale;
          w[i] -= lr * v[i];
        }
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(stats.loss)) throw DivergenceError(epoch, "non-finite training loss");
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    const Network net(spec, to_weights(spec, params));
    stats.test_accuracy = accuracy(net, dataset.test);
    result.log.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.weights = to_weights(spec, params);
  return result;
}

}  // namespace iso3d
