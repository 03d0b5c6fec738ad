#include "cardioseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cardioseg {

void Grid::validate() const {
  for (float s : spacing)
    if (!(s > 0.0f) || !std::isfinite(s)) throw std::invalid_argument("volume: spacing must be positive and finite");
  if (voxel_count() == 0) throw std::invalid_argument("volume: empty dimensions");
  if (base_index >= dims[2])
    throw std::invalid_argument("volume: base index " + std::to_string(base_index) + " outside " +
                                std::to_string(dims[2]) + " slices");
  if (crop_box) {
    for (int a = 0; a < 3; ++a)
      if (crop_box->lo[a] >= crop_box->hi[a] || crop_box->hi[a] > dims[a])
        throw std::invalid_argument("volume: crop box outside the volume");
  }
}

namespace {

template <typename V>
Grid3D<V> crop_impl(const Grid3D<V>& in) {
  in.grid.validate();
  if (!in.grid.crop_box) return in;
  const CropBox& box = *in.grid.crop_box;
  Grid g = in.grid;
  g.crop_box.reset();
  for (int a = 0; a < 3; ++a) g.dims[a] = box.hi[a] - box.lo[a];
  // Slices below the crop keep their ordering; the base index shifts with it.
  const std::size_t zlo = box.lo[2];
  g.base_index = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(in.grid.base_index) - static_cast<std::ptrdiff_t>(zlo), 0,
                                            static_cast<std::ptrdiff_t>(g.dims[2]) - 1);
  Grid3D<V> out(g);
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x) out.at(x, y, z) = in.at(x + box.lo[0], y + box.lo[1], z + zlo);
  return out;
}

struct AxisMap {
  std::size_t out_extent = 0;   // after pad/crop
  std::ptrdiff_t shift = 0;     // resampled index = output index + shift
  std::size_t resampled = 0;    // extent on the isotropic grid
  double step = 1.0;            // input index units per output index
};

AxisMap axis_map(std::size_t n, float spacing, float target, std::size_t fixed_extent) {
  if (n < 2) throw std::invalid_argument("resample_isotropic: degenerate single-voxel axis");
  AxisMap m;
  m.step = static_cast<double>(target) / static_cast<double>(spacing);
  m.resampled = static_cast<std::size_t>(std::floor(static_cast<double>(n - 1) / m.step + 1e-9)) + 1;
  if (fixed_extent == 0) {
    m.out_extent = m.resampled;
  } else {
    m.out_extent = fixed_extent;
    if (m.resampled <= fixed_extent)
      m.shift = -static_cast<std::ptrdiff_t>((fixed_extent - m.resampled) / 2);
    else
      m.shift = static_cast<std::ptrdiff_t>((m.resampled - fixed_extent) / 2);
  }
  return m;
}

template <typename V>
Grid3D<float> resample_impl(const Grid3D<V>& in, float target, std::size_t in_plane, float fill) {
  in.grid.validate();
  if (!(target > 0.0f)) throw std::invalid_argument("resample_isotropic: target spacing must be positive");
  const auto& d = in.grid.dims;
  const AxisMap mx = axis_map(d[0], in.grid.spacing[0], target, in_plane);
  const AxisMap my = axis_map(d[1], in.grid.spacing[1], target, in_plane);
  const AxisMap mz = axis_map(d[2], in.grid.spacing[2], target, 0);

  Grid g;
  g.dims = {mx.out_extent, my.out_extent, mz.out_extent};
  g.spacing = {target, target, target};
  const double base_pos = static_cast<double>(in.grid.base_index) / mz.step;
  g.base_index = std::min<std::size_t>(static_cast<std::size_t>(std::lround(base_pos)), g.dims[2] - 1);

  // Per-axis interpolation stencils: (lower index, weight of upper), or -1 for fill.
  struct Tap {
    std::ptrdiff_t i0 = -1;
    double w = 0.0;
  };
  auto taps = [](const AxisMap& m, std::size_t n) {
    std::vector<Tap> t(m.out_extent);
    for (std::size_t o = 0; o < m.out_extent; ++o) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(o) + m.shift;
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(m.resampled)) continue;
      double u = static_cast<double>(r) * m.step;
      u = std::min(u, static_cast<double>(n - 1));
      auto i0 = static_cast<std::ptrdiff_t>(std::floor(u));
      if (i0 >= static_cast<std::ptrdiff_t>(n) - 1) i0 = static_cast<std::ptrdiff_t>(n) - 2;
      t[o] = {i0, u - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(mx, d[0]);
  const auto ty = taps(my, d[1]);
  const auto tz = taps(mz, d[2]);

  Grid3D<float> out(g, fill);
  for (std::size_t z = 0; z < g.dims[2]; ++z) {
    const Tap& cz = tz[z];
    for (std::size_t y = 0; y < g.dims[1]; ++y) {
      const Tap& cy = ty[y];
      if (cy.i0 < 0) continue;
      for (std::size_t x = 0; x < g.dims[0]; ++x) {
        const Tap& cx = tx[x];
        if (cx.i0 < 0) continue;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          const double wz = dz ? cz.w : 1.0 - cz.w;
          if (wz == 0.0) continue;
          for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? cy.w : 1.0 - cy.w;
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const double wx = dx ? cx.w : 1.0 - cx.w;
              if (wx == 0.0) continue;
              acc += wz * wy * wx *
                     static_cast<double>(in.at(static_cast<std::size_t>(cx.i0 + dx), static_cast<std::size_t>(cy.i0 + dy),
                                               static_cast<std::size_t>(cz.i0 + dz)));
            }
          }
        }
        out.at(x, y, z) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

Volume crop(const Volume& v) { return crop_impl(v); }
BinaryMask3D crop(const BinaryMask3D& m) { return crop_impl(m); }

Volume resample_isotropic(const Volume& v, float target_mm, std::size_t in_plane) {
  const Volume c = crop(v);
  const float fill = c.data.empty() ? 0.0f : *std::min_element(c.data.begin(), c.data.end());
  return resample_impl(c, target_mm, in_plane, fill);
}

BinaryMask3D resample_isotropic(const BinaryMask3D& m, float target_mm, std::size_t in_plane) {
  const Grid3D<float> r = resample_impl(crop(m), target_mm, in_plane, 0.0f);
  BinaryMask3D out(r.grid);
  for (std::size_t i = 0; i < r.data.size(); ++i) out.data[i] = r.data[i] >= 0.5f ? 1 : 0;
  return out;
}

std::vector<double> resample_1d(std::span<const double> samples, double spacing_mm, double target_mm) {
  if (samples.size() < 2) throw std::invalid_argument("resample_1d: need at least two samples");
  if (!(spacing_mm > 0) || !(target_mm > 0)) throw std::invalid_argument("resample_1d: spacing must be positive");
  const AxisMap m = axis_map(samples.size(), static_cast<float>(spacing_mm), static_cast<float>(target_mm), 0);
  std::vector<double> out(m.resampled);
  for (std::size_t o = 0; o < m.resampled; ++o) {
    const double u = std::min(static_cast<double>(o) * m.step, static_cast<double>(samples.size() - 1));
    const std::size_t i0 = std::min(static_cast<std::size_t>(u), samples.size() - 2);
    const double w = u - static_cast<double>(i0);
    out[o] = (1.0 - w) * samples[i0] + w * samples[i0 + 1];
  }
  return out;
}

double percentile(std::vector<float> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  q = std::clamp(q, 0.0, 1.0);
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  double vhi = vlo;
  if (hi != lo) vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return vlo + (rank - static_cast<double>(lo)) * (vhi - vlo);
}

Volume normalize_intensity(const Volume& v, NormalizeReport* report) {
  NormalizeReport r;
  Volume out = v;
  if (v.data.empty()) throw std::invalid_argument("normalize_intensity: empty volume");
  if (!std::all_of(v.data.begin(), v.data.end(), [](float x) { return std::isfinite(x); }))
    throw std::invalid_argument("normalize_intensity: volume contains non-finite intensities");
  r.low = percentile(v.data, 0.01);
  r.high = percentile(v.data, 0.99);
  const double span = r.high - r.low;
  if (!(span > 1e-12 * std::max(1.0, std::abs(r.high)))) {
    r.degenerate = true;
    r.warning = "normalize_intensity: volume has no intensity spread; mapped to zeros";
    std::fill(out.data.begin(), out.data.end(), 0.0f);
  } else {
    for (float& x : out.data) x = static_cast<float>(std::clamp((static_cast<double>(x) - r.low) / span, 0.0, 1.0));
  }
  if (report) *report = r;
  return out;
}

Volume preprocess(const Volume& v, NormalizeReport* report) {
  return normalize_intensity(resample_isotropic(crop(v)), report);
}

std::size_t select_init_slice(const Grid& g) {
  if (g.base_index >= g.dims[2] && g.dims[2] > 0)
    throw std::invalid_argument("select_init_slice: base index outside the volume");
  return (kApexLimit + g.base_index) / 2;
}

}  // namespace cardioseg
