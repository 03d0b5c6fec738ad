#pragma once

// Volume containers and preprocessing: crop, isotropic resampling and
// intensity normalization.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

inline constexpr float kIsotropicSpacingMm = 1.25f;
inline constexpr std::size_t kSliceExtent = 128;

/// Half-open voxel box [lo, hi) per axis (x, y, z).
struct CropBox {
  std::array<std::uint32_t, 3> lo{};
  std::array<std::uint32_t, 3> hi{};
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

/// Shared geometry header of volumes and masks. Voxels are stored x-fastest,
/// then y, then z; slice z is the y x x image at that index.
struct Grid {
  std::array<std::size_t, 3> dims{};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::size_t base_index = 0;
  std::optional<CropBox> crop_box;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t slice_size() const { return dims[0] * dims[1]; }
  std::size_t slices() const { return dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * dims[1] + y) * dims[0] + x; }

  /// Throws unless spacing > 0 and base_index < nz.
  void validate() const;

  friend bool operator==(const Grid&, const Grid&) = default;
};

template <typename V>
struct Grid3D {
  Grid grid;
  std::vector<V> data;

  Grid3D() = default;
  explicit Grid3D(Grid g, V fill = V{}) : grid(std::move(g)), data(grid.voxel_count(), fill) {}

  const std::array<std::size_t, 3>& dims() const { return grid.dims; }
  V& at(std::size_t x, std::size_t y, std::size_t z) { return data[grid.index(x, y, z)]; }
  const V& at(std::size_t x, std::size_t y, std::size_t z) const { return data[grid.index(x, y, z)]; }

  std::span<V> slice(std::size_t z) { return std::span<V>(data).subspan(z * grid.slice_size(), grid.slice_size()); }
  std::span<const V> slice(std::size_t z) const {
    return std::span<const V>(data).subspan(z * grid.slice_size(), grid.slice_size());
  }

  /// Slice z as a 1 x 1 x ny x nx tensor.
  template <typename T = float>
  Tensor<T> slice_tensor(std::size_t z) const {
    auto s = slice(z);
    return Tensor<T>(Shape{1, 1, grid.dims[1], grid.dims[0]}, std::vector<T>(s.begin(), s.end()));
  }

  friend bool operator==(const Grid3D&, const Grid3D&) = default;
};

using Volume = Grid3D<float>;
using BinaryMask3D = Grid3D<std::uint8_t>;
using ProbabilityMask3D = Grid3D<float>;

/// Applies the crop box, if any; the result has no crop box.
Volume crop(const Volume& v);
BinaryMask3D crop(const BinaryMask3D& m);

/// Trilinear resampling onto a `target_mm` isotropic grid aligned with the
/// first voxel, then centre pad / centre crop in-plane to `in_plane` pixels.
/// The base index is carried over to the nearest output slice.
Volume resample_isotropic(const Volume& v, float target_mm = kIsotropicSpacingMm, std::size_t in_plane = kSliceExtent);

/// Same geometry for a ground-truth mask: trilinear on {0,1}, then >= 0.5.
BinaryMask3D resample_isotropic(const BinaryMask3D& m, float target_mm = kIsotropicSpacingMm,
                                std::size_t in_plane = kSliceExtent);

/// Linear interpolation of a 1D sample row at `spacing_mm` onto `target_mm`.
std::vector<double> resample_1d(std::span<const double> samples, double spacing_mm, double target_mm);

struct NormalizeReport {
  double low = 0.0;   // 1st percentile
  double high = 0.0;  // 99th percentile
  bool degenerate = false;
  std::string warning;
};

/// Maps the [1st, 99th] intensity percentiles to [0, 1] and clamps.
/// A volume without intensity spread maps to zeros and sets a warning.
Volume normalize_intensity(const Volume& v, NormalizeReport* report = nullptr);

/// Linear-interpolated percentile of `values`, q in [0, 1].
double percentile(std::vector<float> values, double q);

/// crop, resample_isotropic and normalize_intensity in sequence.
Volume preprocess(const Volume& v, NormalizeReport* report = nullptr);

/// Lowest slice considered part of the ventricles.
inline constexpr std::size_t kApexLimit = 0;

/// Middle slice between the apex limit and the base.
std::size_t select_init_slice(const Grid& g);

}  // namespace cardioseg
