#pragma once

#include <random>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

/// In-network data augmentation applied during training only.
struct AugmentConfig {
  double max_rotation_deg = 20.0;
  double gaussian_sigma = 0.03;  // normalized intensity units
  double salt_pepper_fraction = 0.01;
  bool enabled = true;

  static AugmentConfig disabled() { return {0.0, 0.0, 0.0, false}; }
  void validate() const;
};

template <typename T>
struct AugmentedSample {
  Tensor<T> images;
  Tensor<T> masks;
  double angle_deg = 0.0;
};

/// One angle drawn uniformly in [-max, +max] rotates every image (bilinear)
/// and every mask (nearest neighbour) of the sample about the slice centre.
/// Gaussian and salt-and-pepper noise then touch the images only.
/// `images` and `masks` are 1 x C x H x W stacks with matching H, W.
template <typename T>
AugmentedSample<T> augment_sample(const Tensor<T>& images, const Tensor<T>& masks, const AugmentConfig& cfg,
                                  std::mt19937_64& rng);

/// Bilinear rotation about the centre, zero outside the source.
template <typename T>
Tensor<T> rotate_bilinear(const Tensor<T>& images, double angle_deg);

/// Nearest-neighbour rotation about the centre; keeps binary masks binary.
template <typename T>
Tensor<T> rotate_nearest(const Tensor<T>& masks, double angle_deg);

}  // namespace cardioseg
