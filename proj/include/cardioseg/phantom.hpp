#pragma once

// Synthetic short-axis cardiac phantom: an LV annulus tapering to a solid cap
// at the apex, an RV wall arc whose angular extent shrinks towards the apex,
// an optional myocardium-bright distractor blob, smooth shading and noise.

#include <cstdint>
#include <optional>
#include <string>

#include "cardioseg/volume.hpp"

namespace cardioseg {

struct PhantomSpec {
  std::size_t n_slices = 60;
  std::size_t image_size = kSliceExtent;
  float spacing_mm = kIsotropicSpacingMm;
  std::optional<std::size_t> base_index;  // defaults to the top slice

  // LV geometry, mm unless noted.
  std::size_t apex_slice = 3;      // first slice with myocardium
  std::size_t taper_slices = 28;   // slices from apex to full size; 0 = constant radii
  double lv_outer_radius_mm = 28.0;
  double lv_tip_radius_mm = 7.5;
  double wall_thickness_mm = 11.0;
  double center_offset_x_px = 12.0;  // from the image centre
  double center_offset_y_px = 0.0;
  double drift_x_px = 0.12;  // per slice
  double drift_y_px = -0.08;

  // RV wall arc around a centre offset from the LV centre.
  double rv_angle_deg = 180.0;
  double rv_offset_mm = 26.0;
  double rv_radius_mm = 31.0;
  double rv_thickness_mm = 6.5;
  double rv_extent_deg = 260.0;
  std::size_t rv_delay_slices = 4;   // RV starts this many slices above the apex
  std::size_t rv_taper_slices = 26;  // slices for the arc to reach full extent; 0 = constant

  // Intensities (arbitrary units) and texture.
  double background = 0.15;
  double myocardium = 0.40;
  double blood = 0.85;
  double shading = 0.05;
  double noise_sigma = 0.04;
  bool distractor = true;

  // Per-seed anatomical variation as a fraction of the nominal values.
  double jitter = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t resolved_base_index() const { return base_index.value_or(n_slices - 1); }
};

struct SliceGeometry {
  bool has_heart = false;
  double cx = 0, cy = 0;           // LV centre, px
  double r_outer = 0, r_inner = 0;  // px; r_inner 0 means a solid cap
  double rv_cx = 0, rv_cy = 0;     // px
  double rv_radius = 0, rv_thickness = 0;
  double rv_dir = 0;         // radians
  double rv_half_extent = 0;  // radians, 0 = no RV
};

/// Geometry after applying the seeded jitter, slice by slice.
class PhantomGeometry {
 public:
  explicit PhantomGeometry(const PhantomSpec& spec);
  SliceGeometry slice(std::size_t z) const;
  /// Myocardium indicator at pixel-space point (x, y) on slice geometry g.
  static bool myocardium(const SliceGeometry& g, double x, double y);
  static bool blood(const SliceGeometry& g, double x, double y);

 private:
  PhantomSpec s_;
};

struct Phantom {
  Volume volume;
  BinaryMask3D ground_truth;
};

Phantom generate_phantom(const PhantomSpec& spec);

/// key = value lines; '#' starts a comment. Unknown keys are rejected.
PhantomSpec parse_phantom_spec(const std::string& text);
std::string format_phantom_spec(const PhantomSpec& spec);

}  // namespace cardioseg
