#pragma once

// The initialization network (coarse-to-fine subnets at S/4, S/2, S) and the
// spatial propagation network (subnets at S/2, S), where S is the slice
// extent (128 by default).

#include <cstdint>
#include <string>
#include <vector>

#include "cardioseg/layers.hpp"
#include "cardioseg/tensor.hpp"

namespace cardioseg {

enum class NetworkKind : std::uint32_t { init = 1, propagation = 2 };

const char* to_string(NetworkKind kind);

/// Number of slices predicted per propagation step.
inline constexpr std::size_t kLookahead = 4;
/// Propagation input channels: anchor slice, anchor mask, lookahead slices.
inline constexpr std::size_t kPropagationInputChannels = 2 + kLookahead;

struct LayerSpec {
  enum class Kind : std::uint32_t { conv_group = 0, downscale = 1, upscale = 2 };
  Kind kind = Kind::conv_group;
  std::size_t filter = 3;    // conv_group only
  std::size_t channels = 0;  // conv_group only
  std::size_t factor = 1;    // downscale / upscale only

  static LayerSpec conv_group(std::size_t filter, std::size_t channels) {
    return {Kind::conv_group, filter, channels, 1};
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// One subnet: a layer chain followed by a 1x1 head and a sigmoid.
struct SubNetSpec {
  std::size_t io_size = 0;
  std::size_t in_channels = 0;  // image channels plus coarse-mask channels
  std::vector<LayerSpec> layers;
  std::size_t out_channels = 1;
  bool takes_coarse_mask = false;

  /// Throws unless the chain maps io_size back to io_size.
  void validate() const;
};

/// Declared architecture hyperparameters; stored verbatim in checkpoints.
struct ArchSpec {
  NetworkKind kind = NetworkKind::init;
  std::size_t image_size = 128;
  std::size_t filter = 3;
  std::vector<std::size_t> widths{16, 32, 32, 16};
  double leaky_slope = kLeakySlope;
  BatchNormConfig batch_norm{};

  static ArchSpec defaults(NetworkKind kind);

  std::size_t image_channels() const;
  std::size_t output_channels() const;
  /// Subnet extents, coarse to fine.
  std::vector<std::size_t> scales() const;
  std::vector<SubNetSpec> subnets() const;
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <typename T>
struct ConvGroupParams {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> running;
};

template <typename T>
struct SubNetParams {
  std::vector<ConvGroupParams<T>> groups;
  Tensor<T> head_weight;
  Tensor<T> head_bias;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

template <typename T>
struct ModelParameters {
  ArchSpec arch;
  std::uint32_t format_version = kCheckpointFormatVersion;
  std::vector<SubNetParams<T>> subnets;

  NetworkKind kind() const { return arch.kind; }

  template <typename U>
  ModelParameters<U> cast() const;
};

enum class ParamRole { learnable, running_stat };

/// Visits every tensor with a stable dotted name, e.g. "sub64.g2.gamma".
template <typename T, typename F>
void for_each_tensor(ModelParameters<T>& params, F&& fn) {
  for (std::size_t s = 0; s < params.subnets.size(); ++s) {
    const std::string prefix = "sub" + std::to_string(params.arch.scales()[s]);
    auto& sub = params.subnets[s];
    for (std::size_t g = 0; g < sub.groups.size(); ++g) {
      const std::string gp = prefix + ".g" + std::to_string(g);
      auto& grp = sub.groups[g];
      fn(gp + ".weight", grp.weight, ParamRole::learnable);
      fn(gp + ".bias", grp.bias, ParamRole::learnable);
      fn(gp + ".gamma", grp.gamma, ParamRole::learnable);
      fn(gp + ".beta", grp.beta, ParamRole::learnable);
      fn(gp + ".running_mean", grp.running.mean, ParamRole::running_stat);
      fn(gp + ".running_var", grp.running.variance, ParamRole::running_stat);
    }
    fn(prefix + ".head.weight", sub.head_weight, ParamRole::learnable);
    fn(prefix + ".head.bias", sub.head_bias, ParamRole::learnable);
  }
}

template <typename T, typename F>
void for_each_tensor(const ModelParameters<T>& params, F&& fn) {
  for_each_tensor(const_cast<ModelParameters<T>&>(params),
                  [&](const std::string& name, Tensor<T>& t, ParamRole role) {
                    fn(name, static_cast<const Tensor<T>&>(t), role);
                  });
}

/// Deterministic initialization: He-normal conv weights (variance 2/fan_in),
/// zero biases, gamma 1, beta 0, running mean 0 and variance 1.
template <typename T>
ModelParameters<T> init_parameters(const ArchSpec& arch, std::uint64_t seed);

template <typename T>
ModelParameters<T> init_parameters(NetworkKind kind, std::uint64_t seed) {
  return init_parameters<T>(ArchSpec::defaults(kind), seed);
}

/// Same structure as `params`, every tensor zero. Used as a gradient buffer.
template <typename T>
ModelParameters<T> zeros_like(const ModelParameters<T>& params);

/// Throws unless every tensor shape agrees with params.arch.
template <typename T>
void validate_parameters(const ModelParameters<T>& params);

/// Probability masks, one per scale, coarse to fine.
template <typename T>
struct NetOutput {
  std::vector<std::size_t> scales;
  std::vector<Tensor<T>> masks;

  const Tensor<T>& finest() const { return masks.back(); }
};

template <typename T>
struct ConvGroupTape {
  Tensor<T> input;
  Tensor<T> normalized_out;  // batch-norm output, leaky ReLU input
  BatchNormCache<T> bn;
};

template <typename T>
struct SubNetTape {
  std::vector<ConvGroupTape<T>> groups;
  Tensor<T> head_input;
  Tensor<T> output;
};

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct NetworkTape {
  std::vector<SubNetTape<T>> subnets;
};

/// Runs the network on an N x C x S x S input. In train mode batch-norm uses
/// batch statistics and updates the running statistics inside `params`.
template <typename T>
NetOutput<T> forward(ModelParameters<T>& params, const Tensor<T>& input, Mode mode, NetworkTape<T>* tape = nullptr);

/// Inference-mode forward; never mutates parameters.
template <typename T>
NetOutput<T> forward(const ModelParameters<T>& params, const Tensor<T>& input);

/// Accumulates parameter gradients into `grads` given d(loss)/d(mask) for
/// every scale.
template <typename T>
void backward(const ModelParameters<T>& params, const NetworkTape<T>& tape, const std::vector<Tensor<T>>& mask_grads,
              ModelParameters<T>& grads);

/// Inputs of one propagation step, each N x C x S x S.
template <typename T>
struct PropagationInput {
  Tensor<T> anchor_slice;      // 1 channel
  Tensor<T> anchor_mask;       // 1 channel, values in [0, 1]
  Tensor<T> lookahead_slices;  // kLookahead channels, slice z+d .. z+4d

  /// Channel stack: anchor slice, anchor mask, lookahead slices.
  Tensor<T> stacked() const;
};

/// Init network on a single-channel slice of the architecture's image size.
template <typename T>
NetOutput<T> init_net_forward(const Tensor<T>& slice, ModelParameters<T>& params, Mode mode,
                              NetworkTape<T>* tape = nullptr);

template <typename T>
NetOutput<T> prop_net_forward(const PropagationInput<T>& input, ModelParameters<T>& params, Mode mode,
                              NetworkTape<T>* tape = nullptr);

}  // namespace cardioseg
