#include "cardioseg/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cardioseg {

void LossConfig::validate() const {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("loss config: a and b must be positive");
  if (std::abs(a + 2 * b - 1.0) > 1e-12) throw std::invalid_argument("loss config: a + 2b must equal 1");
  if (!(t > 0 && t < 1)) throw std::invalid_argument("loss config: t must lie in (0, 1)");
}

namespace {

enum class Branch { dead_zone, foreground, background };

Branch classify(double p, double g, const LossConfig& cfg, double& squeezed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("pixel loss: probability " + std::to_string(p) + " outside [0, 1]");
  if (g != 0.0 && g != 1.0) throw std::invalid_argument("pixel loss: ground truth " + std::to_string(g) + " not in {0, 1}");
  squeezed = cfg.a * p + cfg.b;
  if (std::abs(g - squeezed) < cfg.t) return Branch::dead_zone;
  // Outside the dead zone the remaining condition of each branch holds
  // automatically: g = 1 implies p' <= 1 - t, g = 0 implies p' >= t.
  return g == 1.0 ? Branch::foreground : Branch::background;
}

}  // namespace

double pixel_loss(double p, double g, const LossConfig& cfg) {
  double q = 0.0;
  switch (classify(p, g, cfg, q)) {
    case Branch::dead_zone:
      return 0.0;
    case Branch::foreground:
      return -std::log(q);
    case Branch::background:
      return -std::log(1.0 - q);
  }
  return 0.0;
}

double pixel_loss_grad(double p, double g, const LossConfig& cfg) {
  double q = 0.0;
  switch (classify(p, g, cfg, q)) {
    case Branch::dead_zone:
      return 0.0;
    case Branch::foreground:
      return -cfg.a / q;
    case Branch::background:
      return cfg.a / (1.0 - q);
  }
  return 0.0;
}

template <typename T>
double mask_loss(const Tensor<T>& pred, const Tensor<T>& gt, const LossConfig& cfg, Tensor<T>* grad) {
  require_same_shape(pred, gt, "mask_loss");
  if (grad) *grad = Tensor<T>(pred.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double g = gt[i];
    total += pixel_loss(p, g, cfg);
    if (grad) (*grad)[i] = static_cast<T>(pixel_loss_grad(p, g, cfg));
  }
  return total;
}

template <typename T>
Tensor<T> downsample_gt(const Tensor<T>& gt, std::size_t factor) {
  Tensor<T> mean = downscale(gt, factor);
  for (auto& v : mean.values()) v = v >= T(0.5) ? T{1} : T{0};
  return mean;
}

template <typename T>
MultiscaleLoss multiscale_loss(NetworkKind kind, const NetOutput<T>& preds, const Tensor<T>& gt_full,
                               const LossConfig& cfg, std::vector<Tensor<T>>* grads) {
  require_nchw(gt_full, "multiscale_loss ground truth");
  if (preds.masks.empty() || preds.masks.size() != preds.scales.size())
    throw std::invalid_argument("multiscale_loss: predictions carry no scales");
  const std::size_t full = gt_full.height();
  const std::size_t expected_scales = kind == NetworkKind::init ? 3 : 2;
  bool ok = preds.scales.size() == expected_scales && preds.scales.back() == full;
  for (std::size_t i = 0; ok && i < preds.scales.size(); ++i)
    ok = preds.scales[i] == full >> (preds.scales.size() - 1 - i);
  if (!ok)
    throw std::invalid_argument(std::string("multiscale_loss: scale set does not match the ") + to_string(kind) +
                                " network at extent " + std::to_string(full));

  MultiscaleLoss out;
  out.scales = preds.scales;
  if (grads) grads->assign(preds.masks.size(), {});
  for (std::size_t i = 0; i < preds.masks.size(); ++i) {
    const Tensor<T> gt = downsample_gt(gt_full, full / preds.scales[i]);
    const double l = mask_loss(preds.masks[i], gt, cfg, grads ? &(*grads)[i] : nullptr);
    out.per_scale.push_back(l);
    out.total += l;
  }
  return out;
}

template double mask_loss(const Tensor<float>&, const Tensor<float>&, const LossConfig&, Tensor<float>*);
template double mask_loss(const Tensor<double>&, const Tensor<double>&, const LossConfig&, Tensor<double>*);
template Tensor<float> downsample_gt(const Tensor<float>&, std::size_t);
template Tensor<double> downsample_gt(const Tensor<double>&, std::size_t);
template MultiscaleLoss multiscale_loss(NetworkKind, const NetOutput<float>&, const Tensor<float>&,
                                        const LossConfig&, std::vector<Tensor<float>>*);
template MultiscaleLoss multiscale_loss(NetworkKind, const NetOutput<double>&, const Tensor<double>&,
                                        const LossConfig&, std::vector<Tensor<double>>*);

}  // namespace cardioseg
