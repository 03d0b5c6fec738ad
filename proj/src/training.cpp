#include "cardioseg/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "cardioseg/checkpoint.hpp"

namespace cardioseg {

TrainConfig TrainConfig::defaults(NetworkKind kind) {
  TrainConfig cfg;
  cfg.iterations = kind == NetworkKind::init ? kInitIterations : kPropIterations;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train config: learning rate must be positive");
  if (iterations < 1) throw std::invalid_argument("train config: iterations must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be at least 1");
  if (log_every < 1) throw std::invalid_argument("train config: log_every must be at least 1");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw std::invalid_argument("train config: checkpoint_every needs a checkpoint path");
  augmentation.validate();
  loss.validate();
}

// ---------------------------------------------------------------------------
// Dataset construction

namespace {

void check_pair(const Volume& v, const BinaryMask3D& gt) {
  v.grid.validate();
  if (v.grid.dims != gt.grid.dims) throw ShapeError("volume and ground truth differ in dimensions");
}

}  // namespace

std::vector<InitSample> init_samples(const Volume& v, const BinaryMask3D& gt) {
  check_pair(v, gt);
  const std::size_t below_base = v.grid.base_index + 1;
  const std::size_t skip = below_base / 6;
  std::vector<InitSample> out;
  for (std::size_t z = skip; z < below_base - skip; ++z) out.push_back({v.slice_tensor(z), gt.slice_tensor(z)});
  return out;
}

PropSample make_prop_sample(const Volume& v, const BinaryMask3D& gt, std::size_t anchor, Direction direction) {
  check_pair(v, gt);
  const auto step = static_cast<std::ptrdiff_t>(direction);
  const auto last = static_cast<std::ptrdiff_t>(anchor) + step * static_cast<std::ptrdiff_t>(kLookahead);
  if (anchor > v.grid.base_index || last < 0 || last > static_cast<std::ptrdiff_t>(v.grid.base_index))
    throw std::out_of_range("propagation window at anchor " + std::to_string(anchor) + " leaves slices [0, " +
                            std::to_string(v.grid.base_index) + "]");
  const std::size_t h = v.grid.dims[1], w = v.grid.dims[0];
  PropSample s{Tensor<float>::nchw(1, kLookahead + 1, h, w), Tensor<float>::nchw(1, kLookahead + 1, h, w)};
  for (std::size_t k = 0; k <= kLookahead; ++k) {
    const auto z = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(anchor) + step * static_cast<std::ptrdiff_t>(k));
    auto img = v.slice(z);
    auto msk = gt.slice(z);
    std::copy(img.begin(), img.end(), s.slices.plane(0, k));
    std::copy(msk.begin(), msk.end(), s.masks.plane(0, k));
  }
  return s;
}

std::vector<PropSample> prop_samples(const Volume& v, const BinaryMask3D& gt, Direction direction) {
  check_pair(v, gt);
  std::vector<PropSample> out;
  const std::size_t base = v.grid.base_index;
  if (base < kLookahead) return out;
  if (direction == Direction::up) {
    for (std::size_t a = 0; a + kLookahead <= base; ++a) out.push_back(make_prop_sample(v, gt, a, direction));
  } else {
    for (std::size_t a = base + 1; a-- > kLookahead;) out.push_back(make_prop_sample(v, gt, a, direction));
  }
  return out;
}

std::vector<PropSample> prop_samples(const Volume& v, const BinaryMask3D& gt) {
  auto out = prop_samples(v, gt, Direction::up);
  auto down = prop_samples(v, gt, Direction::down);
  out.insert(out.end(), std::make_move_iterator(down.begin()), std::make_move_iterator(down.end()));
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
void sgd_step(ModelParameters<T>& params, const ModelParameters<T>& grads, double lr) {
  if (grads.subnets.size() != params.subnets.size())
    throw ShapeError("sgd_step: gradient structure does not match parameters");
  // Gather gradients in visiting order, then apply in the same order.
  std::vector<std::pair<std::string, const Tensor<T>*>> gs;
  for_each_tensor(grads, [&](const std::string& name, const Tensor<T>& g, ParamRole role) {
    if (role == ParamRole::learnable) gs.emplace_back(name, &g);
  });
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string& name, Tensor<T>& p, ParamRole role) {
    if (role != ParamRole::learnable) return;
    const Tensor<T>& g = *gs.at(i++).second;
    if (g.shape() != p.shape())
      throw ShapeError("sgd_step: gradient for " + name + " has shape " + shape_string(g.shape()) + ", expected " +
                       shape_string(p.shape()));
    if (!g.all_finite()) throw NumericError("non-finite gradient in " + name, 0, name);
  });
  const T step = static_cast<T>(lr);
  i = 0;
  for_each_tensor(params, [&](const std::string&, Tensor<T>& p, ParamRole role) {
    if (role != ParamRole::learnable) return;
    const Tensor<T>& g = *gs[i++].second;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= step * g[k];
  });
}

template void sgd_step(ModelParameters<float>&, const ModelParameters<float>&, double);
template void sgd_step(ModelParameters<double>&, const ModelParameters<double>&, double);

namespace {

constexpr std::uint64_t kSamplerStream = 0x9E3779B97F4A7C15ull;

// Builds one batch: network input and full-resolution ground truth.
using BatchBuilder = std::function<void(std::mt19937_64&, Tensor<float>&, Tensor<float>&)>;

Tensor<float> stack_batch(const std::vector<Tensor<float>>& items) {
  Tensor<float> out = items.front();
  for (std::size_t i = 1; i < items.size(); ++i) {
    const Tensor<float>& t = items[i];
    Tensor<float> next = Tensor<float>::nchw(out.batch() + 1, out.channels(), out.height(), out.width());
    std::copy(out.values().begin(), out.values().end(), next.values().begin());
    std::copy(t.values().begin(), t.values().end(), next.values().begin() + static_cast<std::ptrdiff_t>(out.size()));
    out = std::move(next);
  }
  return out;
}

TrainResult run_training(NetworkKind kind, std::size_t dataset_size, const BatchBuilder& build, const TrainConfig& cfg,
                         const ArchSpec& arch, const TrainCallback& on_log) {
  cfg.validate();
  if (dataset_size == 0) throw std::invalid_argument("training: empty dataset");
  if (arch.kind != kind) throw std::invalid_argument("training: architecture kind does not match the dataset");

  TrainResult result;
  result.params = init_parameters<float>(arch, cfg.seed);
  result.scales = arch.scales();
  ModelParameters<float> grads = zeros_like(result.params);
  std::mt19937_64 rng(cfg.seed ^ kSamplerStream);

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    Tensor<float> input, gt;
    build(rng, input, gt);

    NetworkTape<float> tape;
    const NetOutput<float> out = forward(result.params, input, Mode::train, &tape);
    for (std::size_t s = 0; s < out.masks.size(); ++s)
      if (!out.masks[s].all_finite())
        throw NumericError("non-finite prediction at scale " + std::to_string(out.scales[s]) + " at iteration " +
                               std::to_string(it),
                           it);
    std::vector<Tensor<float>> mask_grads;
    const MultiscaleLoss loss = multiscale_loss(kind, out, gt, cfg.loss, &mask_grads);
    if (!std::isfinite(loss.total))
      throw NumericError("non-finite loss at iteration " + std::to_string(it), it);

    if (it == 1) result.first_loss = loss.total;
    result.final_loss = loss.total;
    if ((it - 1) % cfg.log_every == 0) {
      result.log.push_back({it, loss.total, loss.per_scale});
      if (on_log) on_log(result.log.back());
    }

    for_each_tensor(grads, [](const std::string&, Tensor<float>& t, ParamRole) { t.fill(0.0f); });
    backward(result.params, tape, mask_grads, grads);
    try {
      sgd_step(result.params, grads, cfg.learning_rate);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(it), it, e.layer());
    }

    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) save_checkpoint(result.params, cfg.checkpoint_path);
  }
  return result;
}

}  // namespace

TrainResult train_init(const std::vector<InitSample>& dataset, const TrainConfig& cfg, const ArchSpec& arch,
                       const TrainCallback& on_log) {
  for (const auto& s : dataset) {
    if (s.slice.shape() != Shape{1, 1, arch.image_size, arch.image_size} || s.mask.shape() != s.slice.shape())
      throw ShapeError("train_init: samples must be 1 x 1 x " + std::to_string(arch.image_size) + " x " +
                       std::to_string(arch.image_size) + " slice/mask pairs");
  }
  auto build = [&](std::mt19937_64& rng, Tensor<float>& input, Tensor<float>& gt) {
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<Tensor<float>> images, masks;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const InitSample& s = dataset[pick(rng)];
      auto aug = augment_sample(s.slice, s.mask, cfg.augmentation, rng);
      images.push_back(std::move(aug.images));
      masks.push_back(std::move(aug.masks));
    }
    input = stack_batch(images);
    gt = stack_batch(masks);
  };
  return run_training(NetworkKind::init, dataset.size(), build, cfg, arch, on_log);
}

TrainResult train_prop(const std::vector<PropSample>& dataset, const TrainConfig& cfg, const ArchSpec& arch,
                       const TrainCallback& on_log) {
  const Shape expected{1, kLookahead + 1, arch.image_size, arch.image_size};
  for (const auto& s : dataset) {
    if (s.slices.shape() != expected || s.masks.shape() != expected)
      throw ShapeError("train_prop: samples must be " + shape_string(expected) + " slice/mask stacks");
  }
  auto build = [&](std::mt19937_64& rng, Tensor<float>& input, Tensor<float>& gt) {
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<Tensor<float>> inputs, targets;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const PropSample& s = dataset[pick(rng)];
      auto aug = augment_sample(s.slices, s.masks, cfg.augmentation, rng);
      auto [anchor_slice, lookahead] = split_channels(aug.images, 1);
      auto [anchor_mask, lookahead_masks] = split_channels(aug.masks, 1);
      PropagationInput<float> in{std::move(anchor_slice), std::move(anchor_mask), std::move(lookahead)};
      inputs.push_back(in.stacked());
      targets.push_back(std::move(lookahead_masks));
    }
    input = stack_batch(inputs);
    gt = stack_batch(targets);
  };
  return run_training(NetworkKind::propagation, dataset.size(), build, cfg, arch, on_log);
}

void write_loss_log(const std::filesystem::path& path, const std::vector<std::size_t>& scales,
                    const std::vector<LossRecord>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "iteration,total_loss";
  for (std::size_t s : scales) out << ",loss_" << s;
  out << '\n' << std::setprecision(9);
  for (const auto& r : log) {
    out << r.iteration << ',' << r.total;
    for (double l : r.per_scale) out << ',' << l;
    out << '\n';
  }
}

}  // namespace cardioseg
