#include "cardioseg/volume_io.hpp"

#include <algorithm>
#include <limits>

#include "binary_io.hpp"

namespace cardioseg {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max() - 1)
    throw std::invalid_argument(std::string(what) + " does not fit the file header");
  return static_cast<std::uint32_t>(v);
}

void write_header(ByteWriter& w, const char* magic, const Grid& g) {
  g.validate();
  w.bytes(magic, 4);
  w.u32(kVolumeFormatVersion);
  for (auto d : g.dims) w.u32(narrow(d, "dimension"));
  for (auto s : g.spacing) w.f32(s);
  w.u32(narrow(g.base_index, "base index"));
  if (g.crop_box) {
    for (auto v : g.crop_box->lo) w.u32(v);
    for (auto v : g.crop_box->hi) w.u32(v);
  } else {
    for (int i = 0; i < 6; ++i) w.u32(kNoCropBox);
  }
}

Grid read_header(ByteReader& r, const char* magic, const std::string& what) {
  char m[4];
  r.bytes(m, 4);
  if (std::string(m, 4) != magic)
    throw FormatError(what + ": bad magic '" + std::string(m, 4) + "', expected '" + magic + "'");
  const std::uint32_t version = r.u32();
  if (version != kVolumeFormatVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  Grid g;
  for (auto& d : g.dims) d = r.u32();
  for (auto& s : g.spacing) s = r.f32();
  g.base_index = r.u32();
  std::array<std::uint32_t, 6> box;
  for (auto& v : box) v = r.u32();
  const bool none = std::all_of(box.begin(), box.end(), [](auto v) { return v == kNoCropBox; });
  if (!none) {
    CropBox c;
    for (int i = 0; i < 3; ++i) {
      c.lo[i] = box[i];
      c.hi[i] = box[i + 3];
    }
    g.crop_box = c;
  }
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw FormatError(what + ": invalid header: " + e.what());
  }
  return g;
}

template <typename V>
std::string serialize_float(const Grid3D<V>& v, const char* magic) {
  if (v.data.size() != v.grid.voxel_count()) throw ShapeError("payload does not match dims");
  ByteWriter w;
  write_header(w, magic, v.grid);
  for (float x : v.data) w.f32(x);
  return w.take();
}

Grid3D<float> deserialize_float(const std::string& bytes, const char* magic) {
  const std::string what = std::string(magic) + " file";
  ByteReader r(bytes, what);
  Grid3D<float> v(read_header(r, magic, what));
  if (r.remaining() != v.data.size() * 4)
    throw FormatError(what + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(v.data.size() * 4));
  for (auto& x : v.data) x = r.f32();
  return v;
}

}  // namespace

std::string serialize_volume(const Volume& v) { return serialize_float(v, "CVOL"); }
std::string serialize_probability(const ProbabilityMask3D& p) { return serialize_float(p, "CPRB"); }

std::string serialize_mask(const BinaryMask3D& m) {
  if (m.data.size() != m.grid.voxel_count()) throw ShapeError("payload does not match dims");
  ByteWriter w;
  write_header(w, "CMSK", m.grid);
  for (auto x : m.data) {
    if (x > 1) throw std::invalid_argument("binary mask holds value " + std::to_string(x));
    w.u8(x);
  }
  return w.take();
}

Volume deserialize_volume(const std::string& bytes) { return deserialize_float(bytes, "CVOL"); }
ProbabilityMask3D deserialize_probability(const std::string& bytes) { return deserialize_float(bytes, "CPRB"); }

BinaryMask3D deserialize_mask(const std::string& bytes) {
  ByteReader r(bytes, "CMSK file");
  BinaryMask3D m(read_header(r, "CMSK", "CMSK file"));
  if (r.remaining() != m.data.size())
    throw FormatError("CMSK file: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(m.data.size()));
  for (auto& x : m.data) {
    x = r.u8();
    if (x > 1) throw FormatError("CMSK file: voxel value " + std::to_string(x) + " is not 0 or 1");
  }
  return m;
}

void write_volume(const Volume& v, const std::filesystem::path& path) { detail::write_file(path, serialize_volume(v)); }
void write_mask(const BinaryMask3D& m, const std::filesystem::path& path) { detail::write_file(path, serialize_mask(m)); }
void write_probability(const ProbabilityMask3D& p, const std::filesystem::path& path) {
  detail::write_file(path, serialize_probability(p));
}

Volume read_volume(const std::filesystem::path& path) { return deserialize_volume(detail::read_file(path)); }
BinaryMask3D read_mask(const std::filesystem::path& path) { return deserialize_mask(detail::read_file(path)); }
ProbabilityMask3D read_probability(const std::filesystem::path& path) {
  return deserialize_probability(detail::read_file(path));
}

}  // namespace cardioseg
