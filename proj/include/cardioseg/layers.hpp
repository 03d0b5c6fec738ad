#pragma once

// Forward and backward kernels for every layer primitive used by the
// segmentation networks. All kernels operate on NCHW tensors.

#include <map>
#include <string>
#include <utility>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

enum class Mode { train, inference };

template <typename T>
struct LayerGradients {
  Tensor<T> input_grad;
  std::map<std::string, Tensor<T>> param_grads;
};

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation with zero padding. `weights` is out x in x kH x kW,
/// `bias` has one entry per output channel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// Gradients with respect to input, "weight" and "bias".
template <typename T>
LayerGradients<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, std::size_t stride,
                                  std::size_t padding, const Tensor<T>& output_grad);

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t padding);

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormConfig {
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;
  friend bool operator==(const BatchNormConfig&, const BatchNormConfig&) = default;
};

/// Running statistics, one entry per channel. Mutated in train mode.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> variance;
};

/// Values kept from the forward pass for the backward pass.
template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<T> normalized;
  std::vector<double> inv_std;
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                     BatchNormStats<T>& running, const BatchNormConfig& cfg, BatchNormCache<T>* cache = nullptr);

/// Inference-only overload that never touches the running statistics.
template <typename T>
Tensor<T> batch_norm_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                               const BatchNormStats<T>& running, const BatchNormConfig& cfg,
                               BatchNormCache<T>* cache = nullptr);

/// Gradients with respect to input, "gamma" and "beta".
template <typename T>
LayerGradients<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                      const Tensor<T>& output_grad);

// ---------------------------------------------------------------------------
// Elementwise activations

inline constexpr double kLeakySlope = 0.25;

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope = T(kLeakySlope));

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& output_grad, T slope = T(kLeakySlope));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

/// Backward in terms of the forward output y: dx = dy * y * (1 - y).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& output_grad);

// ---------------------------------------------------------------------------
// Scale changes

/// Average pooling over factor x factor blocks.
template <typename T>
Tensor<T> downscale(const Tensor<T>& input, std::size_t factor);

template <typename T>
Tensor<T> downscale_backward(const Tensor<T>& output_grad, std::size_t factor);

/// Nearest-neighbour replication by factor along both spatial axes.
template <typename T>
Tensor<T> upscale(const Tensor<T>& input, std::size_t factor);

template <typename T>
Tensor<T> upscale_backward(const Tensor<T>& output_grad, std::size_t factor);

// ---------------------------------------------------------------------------
// Channel plumbing

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of concat_channels: first `first_channels` channels, then the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first_channels);

}  // namespace cardioseg
