#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "iso3d/dataset.hpp"
#include "iso3d/model.hpp"

namespace iso3d {

/// Flat parameter buffers aligned with weight_layout(spec).
template <typename T>
struct Parameters {
  std::vector<std::vector<T>> tensors;
};

template <typename T>
Parameters<T> to_parameters(const ModelSpec& spec, const Weights& weights);
Weights to_weights(const ModelSpec& spec, const Parameters<float>& params);
template <typename T>
Parameters<T> zeros_like(const Parameters<T>& params);

/// Cross-entropy of one example. When grad is non-null the parameter
/// gradient is accumulated into it (it must be shaped like params). When
/// predicted is non-null it receives the argmax class.
template <typename T>
T loss_and_gradient(const ModelSpec& spec, const Parameters<T>& params, const ModelInput& input, std::size_t label,
                    Parameters<T>* grad, std::size_t* predicted = nullptr);

/// The network input for a cloud: the cloud itself, or its voxelization.
ModelInput make_input(const ModelSpec& spec, const PointCloud& cloud);

double accuracy(const Network& net, const std::vector<LabeledExample>& examples);

struct TrainOptions {
  int epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;  ///< from the forward passes made while training
  double test_accuracy = 0.0;
};

struct TrainResult {
  Weights weights;
  std::vector<EpochStats> log;
};

/// Mini-batch SGD with momentum on mean cross-entropy. Deterministic for a
/// fixed seed. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainOptions& options,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace iso3d
