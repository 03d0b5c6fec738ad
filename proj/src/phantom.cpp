#include "cardioseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cardioseg {

namespace {

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

double ramp(std::size_t z, std::size_t start, std::size_t length) {
  if (z < start) return 0.0;
  if (length == 0) return 1.0;
  return smoothstep(static_cast<double>(z - start) / static_cast<double>(length));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("phantom spec: " + what);
}

bool finite_all(std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

constexpr std::uint64_t kNoiseStream = 0xD1B54A32D192ED03ULL;

}  // namespace

void PhantomSpec::validate() const {
  require(n_slices >= 1, "n_slices must be >= 1");
  require(image_size >= 8, "image_size must be >= 8");
  require(std::isfinite(spacing_mm) && spacing_mm > 0, "spacing_mm must be positive");
  require(resolved_base_index() < n_slices, "base_index must be < n_slices");
  require(apex_slice < n_slices, "apex_slice must be < n_slices");
  require(finite_all({lv_outer_radius_mm, lv_tip_radius_mm, wall_thickness_mm, center_offset_x_px,
                      center_offset_y_px, drift_x_px, drift_y_px, rv_angle_deg, rv_offset_mm, rv_radius_mm,
                      rv_thickness_mm, rv_extent_deg, background, myocardium, blood, shading, noise_sigma, jitter}),
          "all values must be finite");
  require(lv_tip_radius_mm > 0, "lv_tip_radius_mm must be positive");
  require(lv_outer_radius_mm >= lv_tip_radius_mm, "lv_outer_radius_mm must be >= lv_tip_radius_mm");
  require(wall_thickness_mm > 0, "wall_thickness_mm must be positive");
  require(rv_radius_mm > 0 && rv_thickness_mm > 0, "RV radius and thickness must be positive");
  require(rv_offset_mm >= 0, "rv_offset_mm must be >= 0");
  require(rv_extent_deg >= 0 && rv_extent_deg <= 360, "rv_extent_deg must lie in [0, 360]");
  require(shading >= 0 && noise_sigma >= 0, "shading and noise_sigma must be >= 0");
  require(jitter >= 0 && jitter < 0.5, "jitter must lie in [0, 0.5)");
}

PhantomGeometry::PhantomGeometry(const PhantomSpec& spec) : s_(spec) {
  s_.validate();
  std::mt19937_64 rng(s_.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double j = s_.jitter;
  // Draw order is part of the format: changing it changes every phantom.
  s_.lv_outer_radius_mm *= 1.0 + j * u(rng);
  s_.wall_thickness_mm *= 1.0 + j * u(rng);
  s_.rv_radius_mm *= 1.0 + j * u(rng);
  s_.rv_offset_mm *= 1.0 + j * u(rng);
  s_.rv_thickness_mm *= 1.0 + j * u(rng);
  s_.rv_angle_deg += 150.0 * j * u(rng);
  s_.center_offset_x_px += 40.0 * j * u(rng);
  s_.center_offset_y_px += 40.0 * j * u(rng);
  s_.drift_x_px += 0.5 * j * u(rng);
  s_.drift_y_px += 0.5 * j * u(rng);
  s_.lv_outer_radius_mm = std::max(s_.lv_outer_radius_mm, s_.lv_tip_radius_mm);
}

SliceGeometry PhantomGeometry::slice(std::size_t z) const {
  SliceGeometry g;
  if (z < s_.apex_slice || z >= s_.n_slices) return g;
  const double px = 1.0 / s_.spacing_mm;
  const double dz = static_cast<double>(z - s_.apex_slice);
  const double mid = (static_cast<double>(s_.image_size) - 1.0) / 2.0;
  g.has_heart = true;
  g.cx = mid + s_.center_offset_x_px + s_.drift_x_px * dz;
  g.cy = mid + s_.center_offset_y_px + s_.drift_y_px * dz;

  const double lv = ramp(z, s_.apex_slice, s_.taper_slices);
  g.r_outer = px * (s_.lv_tip_radius_mm + (s_.lv_outer_radius_mm - s_.lv_tip_radius_mm) * lv);
  g.r_inner = std::max(0.0, g.r_outer - px * s_.wall_thickness_mm);

  g.rv_dir = s_.rv_angle_deg * std::numbers::pi / 180.0;
  g.rv_cx = g.cx + px * s_.rv_offset_mm * std::cos(g.rv_dir);
  g.rv_cy = g.cy + px * s_.rv_offset_mm * std::sin(g.rv_dir);
  g.rv_radius = px * s_.rv_radius_mm;
  g.rv_thickness = px * s_.rv_thickness_mm;
  const double rv = ramp(z, s_.apex_slice + s_.rv_delay_slices, s_.rv_taper_slices);
  g.rv_half_extent = 0.5 * s_.rv_extent_deg * std::numbers::pi / 180.0 * rv;
  return g;
}

namespace {

// Angle between (x, y) and direction `dir`, in [0, pi].
double angle_from(double x, double y, double dir) {
  const double a = std::atan2(y, x) - dir;
  return std::abs(std::remainder(a, 2.0 * std::numbers::pi));
}

bool in_rv_sector(const SliceGeometry& g, double x, double y, double& rr) {
  if (g.rv_half_extent <= 0) return false;
  const double dx = x - g.rv_cx, dy = y - g.rv_cy;
  rr = std::hypot(dx, dy);
  return angle_from(dx, dy, g.rv_dir) <= g.rv_half_extent;
}

}  // namespace

bool PhantomGeometry::myocardium(const SliceGeometry& g, double x, double y) {
  if (!g.has_heart) return false;
  const double r = std::hypot(x - g.cx, y - g.cy);
  if (r <= g.r_outer) return r >= g.r_inner;
  double rr = 0;
  return in_rv_sector(g, x, y, rr) && rr >= g.rv_radius && rr <= g.rv_radius + g.rv_thickness;
}

bool PhantomGeometry::blood(const SliceGeometry& g, double x, double y) {
  if (!g.has_heart) return false;
  const double r = std::hypot(x - g.cx, y - g.cy);
  if (r <= g.r_outer) return r < g.r_inner;
  double rr = 0;
  return in_rv_sector(g, x, y, rr) && rr < g.rv_radius;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const PhantomGeometry geom(spec);
  const std::size_t n = spec.image_size;
  const double size = static_cast<double>(n);

  Grid grid;
  grid.dims = {n, n, spec.n_slices};
  grid.spacing = {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
  grid.base_index = spec.resolved_base_index();
  Phantom out{Volume(grid), BinaryMask3D(grid)};

  std::mt19937_64 rng(spec.seed ^ kNoiseStream);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double px = phase(rng), py = phase(rng), pz = phase(rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  // Liver-like blob in the lower corner, shrinking towards the base.
  const double blob_x = 0.86 * size, blob_y = 0.90 * size;
  const double blob_rx = 0.20 * size, blob_ry = 0.11 * size;
  const double blob_top = 0.6 * static_cast<double>(spec.n_slices);

  static constexpr double kSub[2] = {-0.25, 0.25};
  for (std::size_t z = 0; z < spec.n_slices; ++z) {
    const SliceGeometry g = geom.slice(z);
    const double blob_scale = spec.distractor ? 1.0 - smoothstep(static_cast<double>(z) / blob_top) : 0.0;
    auto intensity = [&](double x, double y) {
      if (PhantomGeometry::myocardium(g, x, y)) return spec.myocardium;
      if (PhantomGeometry::blood(g, x, y)) return spec.blood;
      if (blob_scale > 0) {
        const double ex = (x - blob_x) / (blob_rx * blob_scale), ey = (y - blob_y) / (blob_ry * blob_scale);
        if (ex * ex + ey * ey <= 1.0) return spec.myocardium;
      }
      return spec.background;
    };
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        double v = 0;
        for (double sy : kSub)
          for (double sx : kSub) v += intensity(fx + sx, fy + sy);
        v *= 0.25;
        v += spec.shading * std::sin(2.0 * std::numbers::pi * fx / size + px) *
             std::cos(2.0 * std::numbers::pi * fy / size + py + 0.05 * static_cast<double>(z) + pz);
        if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
        out.volume.at(x, y, z) = static_cast<float>(v);
        out.ground_truth.at(x, y, z) = PhantomGeometry::myocardium(g, fx, fy) ? 1 : 0;
      }
    }
  }
  return out;
}

namespace {

struct Field {
  std::function<void(PhantomSpec&, const std::string&)> set;
  std::function<std::string(const PhantomSpec&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw std::invalid_argument("phantom spec: bad value for " + key + ": '" + text + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (text.find('-') != std::string::npos)
      throw std::invalid_argument("phantom spec: " + key + " must be non-negative");
  }
  return v;
}

template <typename T>
std::string show(T v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

template <typename T>
Field field(T PhantomSpec::*member, const char* key) {
  return {[member, key](PhantomSpec& s, const std::string& v) { s.*member = parse_number<T>(key, v); },
          [member](const PhantomSpec& s) { return show(s.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"n_slices", field(&PhantomSpec::n_slices, "n_slices")},
      {"image_size", field(&PhantomSpec::image_size, "image_size")},
      {"spacing_mm", field(&PhantomSpec::spacing_mm, "spacing_mm")},
      {"base_index",
       {[](PhantomSpec& s, const std::string& v) {
          if (v == "auto") s.base_index.reset();
          else s.base_index = parse_number<std::size_t>("base_index", v);
        },
        [](const PhantomSpec& s) { return s.base_index ? show(*s.base_index) : std::string("auto"); }}},
      {"apex_slice", field(&PhantomSpec::apex_slice, "apex_slice")},
      {"taper_slices", field(&PhantomSpec::taper_slices, "taper_slices")},
      {"lv_outer_radius_mm", field(&PhantomSpec::lv_outer_radius_mm, "lv_outer_radius_mm")},
      {"lv_tip_radius_mm", field(&PhantomSpec::lv_tip_radius_mm, "lv_tip_radius_mm")},
      {"wall_thickness_mm", field(&PhantomSpec::wall_thickness_mm, "wall_thickness_mm")},
      {"center_offset_x_px", field(&PhantomSpec::center_offset_x_px, "center_offset_x_px")},
      {"center_offset_y_px", field(&PhantomSpec::center_offset_y_px, "center_offset_y_px")},
      {"drift_x_px", field(&PhantomSpec::drift_x_px, "drift_x_px")},
      {"drift_y_px", field(&PhantomSpec::drift_y_px, "drift_y_px")},
      {"rv_angle_deg", field(&PhantomSpec::rv_angle_deg, "rv_angle_deg")},
      {"rv_offset_mm", field(&PhantomSpec::rv_offset_mm, "rv_offset_mm")},
      {"rv_radius_mm", field(&PhantomSpec::rv_radius_mm, "rv_radius_mm")},
      {"rv_thickness_mm", field(&PhantomSpec::rv_thickness_mm, "rv_thickness_mm")},
      {"rv_extent_deg", field(&PhantomSpec::rv_extent_deg, "rv_extent_deg")},
      {"rv_delay_slices", field(&PhantomSpec::rv_delay_slices, "rv_delay_slices")},
      {"rv_taper_slices", field(&PhantomSpec::rv_taper_slices, "rv_taper_slices")},
      {"background", field(&PhantomSpec::background, "background")},
      {"myocardium", field(&PhantomSpec::myocardium, "myocardium")},
      {"blood", field(&PhantomSpec::blood, "blood")},
      {"shading", field(&PhantomSpec::shading, "shading")},
      {"noise_sigma", field(&PhantomSpec::noise_sigma, "noise_sigma")},
      {"distractor",
       {[](PhantomSpec& s, const std::string& v) {
          if (v == "true" || v == "1") s.distractor = true;
          else if (v == "false" || v == "0") s.distractor = false;
          else throw std::invalid_argument("phantom spec: bad value for distractor: '" + v + "'");
        },
        [](const PhantomSpec& s) { return std::string(s.distractor ? "true" : "false"); }}},
      {"jitter", field(&PhantomSpec::jitter, "jitter")},
      {"seed", field(&PhantomSpec::seed, "seed")},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

PhantomSpec parse_phantom_spec(const std::string& text) {
  PhantomSpec spec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("phantom spec line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end())
      throw std::invalid_argument("phantom spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second.set(spec, value);
  }
  spec.validate();
  return spec;
}

std::string format_phantom_spec(const PhantomSpec& spec) {
  std::ostringstream out;
  for (const auto& [key, f] : fields()) out << key << " = " << f.get(spec) << '\n';
  return out.str();
}

}  // namespace cardioseg
