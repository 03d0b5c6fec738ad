#include "cardioseg/networks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cardioseg {

const char* to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::init:
      return "init";
    case NetworkKind::propagation:
      return "prop";
  }
  return "unknown";
}

void SubNetSpec::validate() const {
  if (io_size == 0 || in_channels == 0 || out_channels == 0)
    throw std::invalid_argument("subnet spec: zero io_size or channel count");
  std::size_t extent = io_size;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerSpec::Kind::conv_group:
        if (layer.channels == 0 || layer.filter % 2 == 0)
          throw std::invalid_argument("subnet spec: conv group needs an odd filter and at least one channel");
        break;
      case LayerSpec::Kind::downscale:
        if (layer.factor == 0 || extent % layer.factor)
          throw std::invalid_argument("subnet spec: downscale factor does not divide extent");
        extent /= layer.factor;
        break;
      case LayerSpec::Kind::upscale:
        if (layer.factor == 0) throw std::invalid_argument("subnet spec: zero upscale factor");
        extent *= layer.factor;
        break;
    }
  }
  if (extent != io_size)
    throw std::invalid_argument("subnet spec: layers map extent " + std::to_string(io_size) + " to " +
                                std::to_string(extent));
}

ArchSpec ArchSpec::defaults(NetworkKind kind) {
  ArchSpec a;
  a.kind = kind;
  return a;
}

std::size_t ArchSpec::image_channels() const {
  return kind == NetworkKind::init ? 1 : kPropagationInputChannels;
}

std::size_t ArchSpec::output_channels() const { return kind == NetworkKind::init ? 1 : kLookahead; }

std::vector<std::size_t> ArchSpec::scales() const {
  if (kind == NetworkKind::init) return {image_size / 4, image_size / 2, image_size};
  return {image_size / 2, image_size};
}

std::vector<SubNetSpec> ArchSpec::subnets() const {
  std::vector<SubNetSpec> out;
  bool first = true;
  for (std::size_t scale : scales()) {
    SubNetSpec s;
    s.io_size = scale;
    s.takes_coarse_mask = !first;
    s.in_channels = image_channels() + (first ? 0 : output_channels());
    s.out_channels = output_channels();
    for (std::size_t w : widths) s.layers.push_back(LayerSpec::conv_group(filter, w));
    out.push_back(std::move(s));
    first = false;
  }
  return out;
}

void ArchSpec::validate() const {
  if (kind != NetworkKind::init && kind != NetworkKind::propagation)
    throw std::invalid_argument("architecture: unknown network kind");
  if (image_size < 4 || image_size % 4)
    throw std::invalid_argument("architecture: image size must be a positive multiple of 4");
  if (widths.empty()) throw std::invalid_argument("architecture: at least one conv group required");
  if (!(batch_norm.epsilon > 0)) throw std::invalid_argument("architecture: batch-norm epsilon must be positive");
  for (const auto& s : subnets()) s.validate();
}

// ---------------------------------------------------------------------------

template <typename T>
template <typename U>
ModelParameters<U> ModelParameters<T>::cast() const {
  ModelParameters<U> out;
  out.arch = arch;
  out.format_version = format_version;
  for (const auto& sub : subnets) {
    SubNetParams<U> s;
    for (const auto& g : sub.groups) {
      s.groups.push_back({g.weight.template cast<U>(), g.bias.template cast<U>(), g.gamma.template cast<U>(),
                          g.beta.template cast<U>(),
                          {g.running.mean.template cast<U>(), g.running.variance.template cast<U>()}});
    }
    s.head_weight = sub.head_weight.template cast<U>();
    s.head_bias = sub.head_bias.template cast<U>();
    out.subnets.push_back(std::move(s));
  }
  return out;
}

template <typename T>
ModelParameters<T> init_parameters(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  auto he_normal = [&rng](Shape shape) {
    const std::size_t fan_in = shape[1] * shape[2] * shape[3];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor<T> w(std::move(shape));
    for (auto& v : w.values()) v = static_cast<T>(dist(rng));
    return w;
  };

  ModelParameters<T> params;
  params.arch = arch;
  for (const auto& spec : arch.subnets()) {
    SubNetParams<T> sub;
    std::size_t channels = spec.in_channels;
    for (const auto& layer : spec.layers) {
      if (layer.kind != LayerSpec::Kind::conv_group) continue;
      ConvGroupParams<T> g;
      g.weight = he_normal({layer.channels, channels, layer.filter, layer.filter});
      g.bias = Tensor<T>(Shape{layer.channels});
      g.gamma = Tensor<T>(Shape{layer.channels}, T{1});
      g.beta = Tensor<T>(Shape{layer.channels});
      g.running.mean = Tensor<T>(Shape{layer.channels});
      g.running.variance = Tensor<T>(Shape{layer.channels}, T{1});
      sub.groups.push_back(std::move(g));
      channels = layer.channels;
    }
    sub.head_weight = he_normal({spec.out_channels, channels, 1, 1});
    sub.head_bias = Tensor<T>(Shape{spec.out_channels});
    params.subnets.push_back(std::move(sub));
  }
  return params;
}

template <typename T>
ModelParameters<T> zeros_like(const ModelParameters<T>& params) {
  ModelParameters<T> out = params;
  for_each_tensor(out, [](const std::string&, Tensor<T>& t, ParamRole) { t.fill(T{0}); });
  return out;
}

template <typename T>
void validate_parameters(const ModelParameters<T>& params) {
  params.arch.validate();
  const auto specs = params.arch.subnets();
  if (params.subnets.size() != specs.size())
    throw ShapeError("parameters: expected " + std::to_string(specs.size()) + " subnets, got " +
                     std::to_string(params.subnets.size()));
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& sub = params.subnets[s];
    std::size_t channels = specs[s].in_channels;
    std::size_t g = 0;
    auto expect = [](const Tensor<T>& t, const Shape& shape, const char* what) {
      if (t.shape() != shape)
        throw ShapeError(std::string("parameters: ") + what + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string(shape));
    };
    for (const auto& layer : specs[s].layers) {
      if (layer.kind != LayerSpec::Kind::conv_group) continue;
      if (g >= sub.groups.size()) throw ShapeError("parameters: missing conv group");
      const auto& grp = sub.groups[g++];
      expect(grp.weight, {layer.channels, channels, layer.filter, layer.filter}, "conv weight");
      for (const Tensor<T>* v : {&grp.bias, &grp.gamma, &grp.beta, &grp.running.mean, &grp.running.variance})
        expect(*v, {layer.channels}, "per-channel vector");
      channels = layer.channels;
    }
    if (g != sub.groups.size()) throw ShapeError("parameters: unexpected extra conv groups");
    expect(sub.head_weight, {specs[s].out_channels, channels, 1, 1}, "head weight");
    expect(sub.head_bias, {specs[s].out_channels}, "head bias");
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> subnet_forward(const SubNetSpec& spec, SubNetParams<T>& sub, const ArchSpec& arch, const Tensor<T>& input,
                         Mode mode, SubNetTape<T>* tape) {
  const T slope = static_cast<T>(arch.leaky_slope);
  Tensor<T> x = input;
  std::size_t g = 0;
  for (const auto& layer : spec.layers) {
    switch (layer.kind) {
      case LayerSpec::Kind::conv_group: {
        auto& grp = sub.groups[g++];
        ConvGroupTape<T> rec;
        Tensor<T> z = conv2d(x, grp.weight, grp.bias, 1, layer.filter / 2);
        if (tape) rec.input = std::move(x);
        Tensor<T> zn = batch_norm(z, grp.gamma, grp.beta, mode, grp.running, arch.batch_norm, tape ? &rec.bn : nullptr);
        x = leaky_relu(zn, slope);
        if (tape) {
          rec.normalized_out = std::move(zn);
          tape->groups.push_back(std::move(rec));
        }
        break;
      }
      case LayerSpec::Kind::downscale:
        x = downscale(x, layer.factor);
        break;
      case LayerSpec::Kind::upscale:
        x = upscale(x, layer.factor);
        break;
    }
  }
  Tensor<T> out = sigmoid(conv2d(x, sub.head_weight, sub.head_bias, 1, 0));
  if (tape) {
    tape->head_input = std::move(x);
    tape->output = out;
  }
  return out;
}

template <typename T>
void subnet_backward(const SubNetSpec& spec, const SubNetParams<T>& sub, const ArchSpec& arch,
                     const SubNetTape<T>& tape, const Tensor<T>& output_grad, SubNetParams<T>& grads,
                     Tensor<T>* input_grad) {
  const T slope = static_cast<T>(arch.leaky_slope);
  Tensor<T> d = sigmoid_backward(tape.output, output_grad);
  auto add = [](Tensor<T>& acc, const Tensor<T>& v) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  };
  auto head = conv2d_backward(tape.head_input, sub.head_weight, 1, 0, d);
  add(grads.head_weight, head.param_grads.at("weight"));
  add(grads.head_bias, head.param_grads.at("bias"));
  d = std::move(head.input_grad);

  std::size_t g = sub.groups.size();
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    switch (it->kind) {
      case LayerSpec::Kind::conv_group: {
        --g;
        const auto& rec = tape.groups[g];
        const auto& grp = sub.groups[g];
        auto& out = grads.groups[g];
        Tensor<T> dz = leaky_relu_backward(rec.normalized_out, d, slope);
        auto bn = batch_norm_backward(rec.bn, grp.gamma, dz);
        auto conv = conv2d_backward(rec.input, grp.weight, 1, it->filter / 2, bn.input_grad);
        add(out.weight, conv.param_grads.at("weight"));
        add(out.bias, conv.param_grads.at("bias"));
        add(out.gamma, bn.param_grads.at("gamma"));
        add(out.beta, bn.param_grads.at("beta"));
        d = std::move(conv.input_grad);
        break;
      }
      case LayerSpec::Kind::downscale:
        d = downscale_backward(d, it->factor);
        break;
      case LayerSpec::Kind::upscale:
        d = upscale_backward(d, it->factor);
        break;
    }
  }
  if (input_grad) *input_grad = std::move(d);
}

template <typename T>
void check_network_input(const ArchSpec& arch, const Tensor<T>& input) {
  require_nchw(input, "network input");
  if (input.channels() != arch.image_channels() || input.height() != arch.image_size ||
      input.width() != arch.image_size)
    throw ShapeError(std::string(to_string(arch.kind)) + " network expects N x " +
                     std::to_string(arch.image_channels()) + " x " + std::to_string(arch.image_size) + " x " +
                     std::to_string(arch.image_size) + " input, got " + shape_string(input.shape()));
}

}  // namespace

template <typename T>
NetOutput<T> forward(ModelParameters<T>& params, const Tensor<T>& input, Mode mode, NetworkTape<T>* tape) {
  const ArchSpec& arch = params.arch;
  check_network_input(arch, input);
  const auto specs = arch.subnets();
  NetOutput<T> out;
  out.scales = arch.scales();
  if (tape) tape->subnets.assign(specs.size(), {});
  for (std::size_t s = 0; s < specs.size(); ++s) {
    Tensor<T> x = downscale(input, arch.image_size / out.scales[s]);
    if (specs[s].takes_coarse_mask) x = concat_channels(x, upscale(out.masks.back(), out.scales[s] / out.scales[s - 1]));
    out.masks.push_back(subnet_forward(specs[s], params.subnets[s], arch, x, mode, tape ? &tape->subnets[s] : nullptr));
  }
  return out;
}

template <typename T>
NetOutput<T> forward(const ModelParameters<T>& params, const Tensor<T>& input) {
  // Inference mode reads the running statistics and never writes them.
  return forward(const_cast<ModelParameters<T>&>(params), input, Mode::inference, static_cast<NetworkTape<T>*>(nullptr));
}

template <typename T>
void backward(const ModelParameters<T>& params, const NetworkTape<T>& tape, const std::vector<Tensor<T>>& mask_grads,
              ModelParameters<T>& grads) {
  const ArchSpec& arch = params.arch;
  const auto specs = arch.subnets();
  const auto scales = arch.scales();
  if (mask_grads.size() != specs.size() || tape.subnets.size() != specs.size())
    throw ShapeError("backward: expected one mask gradient per scale");

  std::vector<Tensor<T>> d = mask_grads;
  for (std::size_t s = specs.size(); s-- > 0;) {
    require_same_shape(tape.subnets[s].output, d[s], "backward mask gradient");
    Tensor<T> input_grad;
    subnet_backward(specs[s], params.subnets[s], arch, tape.subnets[s], d[s], grads.subnets[s],
                    specs[s].takes_coarse_mask ? &input_grad : nullptr);
    if (specs[s].takes_coarse_mask) {
      auto [image_part, coarse_part] = split_channels(input_grad, arch.image_channels());
      Tensor<T> dc = upscale_backward(coarse_part, scales[s] / scales[s - 1]);
      for (std::size_t i = 0; i < dc.size(); ++i) d[s - 1][i] += dc[i];
    }
  }
}

template <typename T>
Tensor<T> PropagationInput<T>::stacked() const {
  require_nchw(anchor_slice, "anchor slice");
  require_nchw(anchor_mask, "anchor mask");
  require_nchw(lookahead_slices, "lookahead slices");
  if (anchor_slice.channels() != 1 || anchor_mask.channels() != 1)
    throw ShapeError("propagation input: anchor slice and mask must have one channel");
  if (lookahead_slices.channels() != kLookahead)
    throw ShapeError("propagation input: expected " + std::to_string(kLookahead) + " lookahead slices, got " +
                     std::to_string(lookahead_slices.channels()));
  for (T v : anchor_mask.values())
    if (!(v >= T{0} && v <= T{1})) throw std::invalid_argument("propagation input: anchor mask outside [0, 1]");
  return concat_channels(concat_channels(anchor_slice, anchor_mask), lookahead_slices);
}

template <typename T>
NetOutput<T> init_net_forward(const Tensor<T>& slice, ModelParameters<T>& params, Mode mode, NetworkTape<T>* tape) {
  if (params.kind() != NetworkKind::init) throw std::invalid_argument("init_net_forward: parameters are not an init network");
  return forward(params, slice, mode, tape);
}

template <typename T>
NetOutput<T> prop_net_forward(const PropagationInput<T>& input, ModelParameters<T>& params, Mode mode,
                              NetworkTape<T>* tape) {
  if (params.kind() != NetworkKind::propagation)
    throw std::invalid_argument("prop_net_forward: parameters are not a propagation network");
  return forward(params, input.stacked(), mode, tape);
}

#define CARDIOSEG_INSTANTIATE_NETWORKS(T)                                                                     \
  template ModelParameters<T> init_parameters(const ArchSpec&, std::uint64_t);                                \
  template ModelParameters<T> zeros_like(const ModelParameters<T>&);                                          \
  template void validate_parameters(const ModelParameters<T>&);                                               \
  template NetOutput<T> forward(ModelParameters<T>&, const Tensor<T>&, Mode, NetworkTape<T>*);                 \
  template NetOutput<T> forward(const ModelParameters<T>&, const Tensor<T>&);                                 \
  template void backward(const ModelParameters<T>&, const NetworkTape<T>&, const std::vector<Tensor<T>>&,      \
                         ModelParameters<T>&);                                                                \
  template struct PropagationInput<T>;                                                                        \
  template NetOutput<T> init_net_forward(const Tensor<T>&, ModelParameters<T>&, Mode, NetworkTape<T>*);        \
  template NetOutput<T> prop_net_forward(const PropagationInput<T>&, ModelParameters<T>&, Mode, NetworkTape<T>*);

CARDIOSEG_INSTANTIATE_NETWORKS(float)
CARDIOSEG_INSTANTIATE_NETWORKS(double)

template ModelParameters<double> ModelParameters<float>::cast<double>() const;
template ModelParameters<float> ModelParameters<double>::cast<float>() const;
template ModelParameters<float> ModelParameters<float>::cast<float>() const;
template ModelParameters<double> ModelParameters<double>::cast<double>() const;

}  // namespace cardioseg
