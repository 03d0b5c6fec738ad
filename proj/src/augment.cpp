#include "cardioseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cardioseg {

void AugmentConfig::validate() const {
  if (!(max_rotation_deg >= 0) || !(gaussian_sigma >= 0))
    throw std::invalid_argument("augment config: magnitudes must be non-negative");
  if (!(salt_pepper_fraction >= 0 && salt_pepper_fraction <= 0.2))
    throw std::invalid_argument("augment config: salt_pepper_fraction must lie in [0, 0.2]");
}

namespace {

// Source coordinate of destination pixel (x, y) for a rotation by `rad`.
struct Rotation {
  double c, s, cx, cy;
  Rotation(double angle_deg, std::size_t h, std::size_t w)
      : c(std::cos(angle_deg * std::numbers::pi / 180.0)),
        s(std::sin(angle_deg * std::numbers::pi / 180.0)),
        cx((static_cast<double>(w) - 1.0) / 2.0),
        cy((static_cast<double>(h) - 1.0) / 2.0) {}
  void source(std::size_t x, std::size_t y, double& sx, double& sy) const {
    const double dx = static_cast<double>(x) - cx;
    const double dy = static_cast<double>(y) - cy;
    sx = c * dx + s * dy + cx;
    sy = -s * dx + c * dy + cy;
  }
};

}  // namespace

template <typename T>
Tensor<T> rotate_bilinear(const Tensor<T>& images, double angle_deg) {
  require_nchw(images, "rotate_bilinear");
  if (angle_deg == 0.0) return images;
  const std::size_t h = images.height(), w = images.width();
  const Rotation rot(angle_deg, h, w);
  Tensor<T> out(images.shape());
  for (std::size_t n = 0; n < images.batch(); ++n) {
    for (std::size_t c = 0; c < images.channels(); ++c) {
      const T* src = images.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double sx, sy;
          rot.source(x, y, sx, sy);
          const double fx = std::floor(sx), fy = std::floor(sy);
          const double ax = sx - fx, ay = sy - fy;
          const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
          double acc = 0.0;
          for (int j = 0; j < 2; ++j) {
            const std::ptrdiff_t yy = y0 + j;
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double wy = j ? ay : 1.0 - ay;
            for (int i = 0; i < 2; ++i) {
              const std::ptrdiff_t xx = x0 + i;
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += wy * (i ? ax : 1.0 - ax) * static_cast<double>(src[yy * static_cast<std::ptrdiff_t>(w) + xx]);
            }
          }
          dst[y * w + x] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> rotate_nearest(const Tensor<T>& masks, double angle_deg) {
  require_nchw(masks, "rotate_nearest");
  if (angle_deg == 0.0) return masks;
  const std::size_t h = masks.height(), w = masks.width();
  const Rotation rot(angle_deg, h, w);
  Tensor<T> out(masks.shape());
  for (std::size_t n = 0; n < masks.batch(); ++n) {
    for (std::size_t c = 0; c < masks.channels(); ++c) {
      const T* src = masks.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double sx, sy;
          rot.source(x, y, sx, sy);
          const auto xx = static_cast<std::ptrdiff_t>(std::lround(sx));
          const auto yy = static_cast<std::ptrdiff_t>(std::lround(sy));
          const bool inside = xx >= 0 && yy >= 0 && xx < static_cast<std::ptrdiff_t>(w) && yy < static_cast<std::ptrdiff_t>(h);
          dst[y * w + x] = inside ? src[yy * static_cast<std::ptrdiff_t>(w) + xx] : T{0};
        }
      }
    }
  }
  return out;
}

template <typename T>
AugmentedSample<T> augment_sample(const Tensor<T>& images, const Tensor<T>& masks, const AugmentConfig& cfg,
                                  std::mt19937_64& rng) {
  require_nchw(images, "augment_sample images");
  require_nchw(masks, "augment_sample masks");
  if (images.height() != masks.height() || images.width() != masks.width())
    throw ShapeError("augment_sample: images " + shape_string(images.shape()) + " and masks " +
                     shape_string(masks.shape()) + " differ in extent");
  cfg.validate();
  AugmentedSample<T> out{images, masks, 0.0};
  if (!cfg.enabled) return out;

  if (cfg.max_rotation_deg > 0) {
    std::uniform_real_distribution<double> angle(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    out.angle_deg = angle(rng);
    out.images = rotate_bilinear(images, out.angle_deg);
    out.masks = rotate_nearest(masks, out.angle_deg);
  }
  if (cfg.gaussian_sigma > 0) {
    std::normal_distribution<double> noise(0.0, cfg.gaussian_sigma);
    for (auto& v : out.images.values()) v = static_cast<T>(v + noise(rng));
  }
  if (cfg.salt_pepper_fraction > 0 && !images.empty()) {
    const auto [lo, hi] = std::minmax_element(images.values().begin(), images.values().end());
    const T low = *lo, high = *hi;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : out.images.values()) {
      const double r = u(rng);
      if (r < cfg.salt_pepper_fraction) v = r < 0.5 * cfg.salt_pepper_fraction ? low : high;
    }
  }
  return out;
}

template AugmentedSample<float> augment_sample(const Tensor<float>&, const Tensor<float>&, const AugmentConfig&,
                                               std::mt19937_64&);
template AugmentedSample<double> augment_sample(const Tensor<double>&, const Tensor<double>&, const AugmentConfig&,
                                                std::mt19937_64&);
template Tensor<float> rotate_bilinear(const Tensor<float>&, double);
template Tensor<double> rotate_bilinear(const Tensor<double>&, double);
template Tensor<float> rotate_nearest(const Tensor<float>&, double);
template Tensor<double> rotate_nearest(const Tensor<double>&, double);

}  // namespace cardioseg
