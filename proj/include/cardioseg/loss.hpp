#pragma once

// Stabilized, class-balanced cross-entropy.
//
// With p' = a*p + b the pixel loss is
//   0            if |g - p'| < t
//   -log(p')     if g = 1 and p' <= 1 - t
//   -log(1 - p') if g = 0 and p' >= t
// The affine squeeze keeps p' inside [b, 1 - b], so the logarithm never sees 0;
// the dead zone removes gradient pressure from already-correct pixels.

#include <vector>

#include "cardioseg/networks.hpp"
#include "cardioseg/tensor.hpp"

namespace cardioseg {

struct LossConfig {
  double a = 0.999;
  double b = 0.0005;
  double t = 0.02;

  /// Throws unless a > 0, b > 0, a + 2b = 1 and 0 < t < 1.
  void validate() const;
};

double pixel_loss(double p, double g, const LossConfig& cfg = {});
double pixel_loss_grad(double p, double g, const LossConfig& cfg = {});

/// Sum of pixel losses. When `grad` is given it receives d(loss)/d(pred).
template <typename T>
double mask_loss(const Tensor<T>& pred, const Tensor<T>& gt, const LossConfig& cfg = {}, Tensor<T>* grad = nullptr);

/// Block mean over factor x factor, then >= 0.5 maps to 1.
template <typename T>
Tensor<T> downsample_gt(const Tensor<T>& gt, std::size_t factor);

struct MultiscaleLoss {
  double total = 0.0;
  std::vector<std::size_t> scales;
  std::vector<double> per_scale;
};

/// Unweighted sum of mask_loss over every predicted scale, with the ground
/// truth coarsened to each scale by downsample_gt. For the propagation network
/// the ground truth carries one channel per lookahead slice.
template <typename T>
MultiscaleLoss multiscale_loss(NetworkKind kind, const NetOutput<T>& preds, const Tensor<T>& gt_full,
                               const LossConfig& cfg = {}, std::vector<Tensor<T>>* grads = nullptr);

}  // namespace cardioseg
