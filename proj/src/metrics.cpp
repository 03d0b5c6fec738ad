#include "cardioseg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace cardioseg {

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size())
    throw ShapeError("dice: mask sizes differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

void require_same_dims(const BinaryMask3D& a, const BinaryMask3D& b, const char* what) {
  if (a.grid.dims != b.grid.dims)
    throw ShapeError(std::string(what) + ": mask dimensions differ (" + std::to_string(a.grid.dims[0]) + "x" +
                     std::to_string(a.grid.dims[1]) + "x" + std::to_string(a.grid.dims[2]) + " vs " +
                     std::to_string(b.grid.dims[0]) + "x" + std::to_string(b.grid.dims[1]) + "x" +
                     std::to_string(b.grid.dims[2]) + ")");
}

}  // namespace

double dice_2d(const BinaryMask3D& a, std::size_t za, const BinaryMask3D& b, std::size_t zb) {
  if (za >= a.grid.dims[2] || zb >= b.grid.dims[2]) throw std::out_of_range("dice_2d: slice index out of range");
  return dice(a.slice(za), b.slice(zb));
}

double dice_3d(const BinaryMask3D& a, const BinaryMask3D& b) {
  require_same_dims(a, b, "dice_3d");
  return dice(a.data, b.data);
}

BinaryMask3D slice_range(const BinaryMask3D& m, std::size_t first, std::size_t last) {
  if (first > last || last >= m.grid.dims[2]) throw std::out_of_range("slice_range: invalid range");
  Grid g = m.grid;
  g.dims[2] = last - first + 1;
  g.base_index = std::min(g.base_index >= first ? g.base_index - first : 0, g.dims[2] - 1);
  g.crop_box.reset();
  BinaryMask3D out(g);
  for (std::size_t z = first; z <= last; ++z) {
    auto src = m.slice(z);
    std::copy(src.begin(), src.end(), out.slice(z - first).begin());
  }
  return out;
}

DiceProfile slicewise_dice_profile(const BinaryMask3D& pred, const BinaryMask3D& gt) {
  require_same_dims(pred, gt, "slicewise_dice_profile");
  DiceProfile p;
  for (std::size_t z = 0; z < pred.grid.dims[2]; ++z) {
    p.dice.push_back(dice(pred.slice(z), gt.slice(z)));
    if (z > 0) p.max_jump = std::max(p.max_jump, std::abs(p.dice[z] - p.dice[z - 1]));
  }
  return p;
}

void write_profile_csv(const std::filesystem::path& path, const DiceProfile& profile) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "slice_index,dice\n" << std::setprecision(9);
  for (std::size_t z = 0; z < profile.dice.size(); ++z) out << z << ',' << profile.dice[z] << '\n';
}

}  // namespace cardioseg
