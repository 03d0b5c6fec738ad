#include "cardioseg/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace cardioseg {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Corner i of the unit cell sits at (i & 1, (i >> 1) & 1, (i >> 2) & 1).
Vec3 corner_pos(int i) { return {double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)}; }

struct Edge {
  int corner;  // lower corner
  int axis;
};

struct CellTables {
  std::array<Edge, 12> edges{};
  // Triangles per case as triples of cell-edge indices; index 12 + h names the
  // centre of hubs[cfg][h].
  std::array<std::vector<std::array<int, 3>>, 256> triangles;
  std::array<std::vector<std::vector<int>>, 256> hubs;
};

bool share_face(const Edge& e, const Edge& f) {
  for (int b = 0; b < 3; ++b)
    if (b != e.axis && b != f.axis && ((e.corner >> b) & 1) == ((f.corner >> b) & 1)) return true;
  return false;
}

int edge_index(const std::array<Edge, 12>& edges, int a, int b) {
  const int lo = std::min(a, b), axis = std::countr_zero(static_cast<unsigned>(a ^ b));
  for (int e = 0; e < 12; ++e)
    if (edges[e].corner == lo && edges[e].axis == axis) return e;
  throw std::logic_error("mesh: corners do not share an edge");
}

Vec3 edge_mid(const Edge& e) {
  Vec3 p = corner_pos(e.corner);
  p[e.axis] += 0.5;
  return p;
}

CellTables build_tables() {
  CellTables t;
  int n = 0;
  for (int axis = 0; axis < 3; ++axis)
    for (int c = 0; c < 8; ++c)
      if (!(c & (1 << axis))) t.edges[n++] = {c, axis};

  // Faces as cyclic corner lists with outward normals.
  struct Face {
    std::array<int, 4> corners;
    Vec3 normal;
  };
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    const int b = 1 << ((axis + 1) % 3), c = 1 << ((axis + 2) % 3);
    for (int side = 0; side < 2; ++side) {
      const int base = side << axis;
      Vec3 normal{0, 0, 0};
      normal[axis] = side ? 1.0 : -1.0;
      faces.push_back({{base, base | b, base | b | c, base | c}, normal});
    }
  }

  for (int cfg = 0; cfg < 256; ++cfg) {
    auto inside = [cfg](int corner) { return (cfg >> corner) & 1; };
    std::array<int, 12> next;
    next.fill(-1);
    auto add_segment = [&](int e0, int e1, const Vec3& m, const Vec3& normal) {
      const Vec3 p = edge_mid(t.edges[e0]), q = edge_mid(t.edges[e1]);
      if (dot(sub(q, p), cross(m, normal)) < 0) std::swap(e0, e1);
      if (next[e0] != -1) throw std::logic_error("mesh: edge with two outgoing segments");
      next[e0] = e1;
    };
    for (const Face& f : faces) {
      int count = 0;
      for (int c : f.corners) count += inside(c);
      if (count == 0 || count == 4) continue;
      // Corners that sit alone (opposite state to both neighbours) each get a
      // segment cutting them off; with two diagonal inside corners those are
      // the inside ones, which keeps them separated.
      const int lone_state = count == 1 ? 1 : count == 3 ? 0 : -1;
      for (int k = 0; k < 4; ++k) {
        const int c = f.corners[k], prev = f.corners[(k + 3) % 4], nxt = f.corners[(k + 1) % 4];
        const bool diagonal = count == 2 && inside(c) && !inside(prev) && !inside(nxt);
        if (!(inside(c) == lone_state || diagonal)) continue;
        const int e0 = edge_index(t.edges, c, prev), e1 = edge_index(t.edges, c, nxt);
        const Vec3 mid = [&] {
          const Vec3 a = edge_mid(t.edges[e0]), b = edge_mid(t.edges[e1]);
          return Vec3{(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2};
        }();
        // m points from the inside towards the outside within the face.
        const Vec3 m = inside(c) ? sub(mid, corner_pos(c)) : sub(corner_pos(c), mid);
        add_segment(e0, e1, m, f.normal);
      }
      if (count == 2) {
        int first_in = -1;
        for (int k = 0; k < 4; ++k)
          if (inside(f.corners[k]) && inside(f.corners[(k + 1) % 4])) first_in = k;
        if (first_in < 0) continue;  // diagonal case handled above
        const int a = f.corners[first_in], b = f.corners[(first_in + 1) % 4];
        const int c = f.corners[(first_in + 2) % 4], d = f.corners[(first_in + 3) % 4];
        const int e0 = edge_index(t.edges, b, c), e1 = edge_index(t.edges, d, a);
        const Vec3 pa = corner_pos(a), pb = corner_pos(b), pc = corner_pos(c), pd = corner_pos(d);
        const Vec3 m = sub(Vec3{pc[0] + pd[0], pc[1] + pd[1], pc[2] + pd[2]},
                           Vec3{pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]});
        add_segment(e0, e1, m, f.normal);
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] == -1 || used[start]) continue;
      std::vector<int> loop;
      for (int e = start; !used[e]; e = next[e]) {
        if (next[e] == -1) throw std::logic_error("mesh: open contour in cell case " + std::to_string(cfg));
        used[e] = true;
        loop.push_back(e);
      }
      // A fan diagonal lying in a cell face would be shared with the neighbour
      // cell, so pick an apex without one or fall back to a centre vertex.
      const std::size_t n = loop.size();
      std::optional<std::size_t> apex;
      for (std::size_t s = 0; s < n && !apex; ++s) {
        bool ok = true;
        for (std::size_t i = 2; i + 1 < n && ok; ++i) ok = !share_face(t.edges[loop[s]], t.edges[loop[(s + i) % n]]);
        if (ok) apex = s;
      }
      if (apex) {
        for (std::size_t i = 1; i + 1 < n; ++i)
          t.triangles[cfg].push_back({loop[*apex], loop[(*apex + i) % n], loop[(*apex + i + 1) % n]});
      } else {
        const int hub = 12 + static_cast<int>(t.hubs[cfg].size());
        t.hubs[cfg].push_back(loop);
        for (std::size_t i = 0; i < n; ++i) t.triangles[cfg].push_back({hub, loop[i], loop[(i + 1) % n]});
      }
    }
  }
  return t;
}

const CellTables& tables() {
  static const CellTables t = build_tables();
  return t;
}

std::uint64_t edge_key(std::uint64_t a, std::uint64_t b) { return a < b ? (a << 32) | b : (b << 32) | a; }

}  // namespace

TriangleMesh extract_surface(const BinaryMask3D& mask, const std::array<double, 3>& spacing_mm) {
  for (double s : spacing_mm)
    if (!std::isfinite(s) || s <= 0) throw std::invalid_argument("extract_surface: spacing must be positive");
  const auto [nx, ny, nz] = mask.grid.dims;
  if (mask.data.size() != nx * ny * nz) throw ShapeError("extract_surface: mask data does not match its dims");
  TriangleMesh mesh;
  if (std::none_of(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; })) return mesh;

  // Padded point lattice: point (i, j, k) is voxel (i - 1, j - 1, k - 1).
  const std::size_t px = nx + 2, py = ny + 2, pz = nz + 2;
  auto value = [&](std::size_t i, std::size_t j, std::size_t k) -> int {
    if (i == 0 || j == 0 || k == 0 || i > nx || j > ny || k > nz) return 0;
    return mask.at(i - 1, j - 1, k - 1) != 0;
  };

  const CellTables& t = tables();
  std::unordered_map<std::uint64_t, std::uint32_t> vertex_of;
  auto vertex = [&](std::size_t i, std::size_t j, std::size_t k, const Edge& e) {
    const std::size_t ci = i + (e.corner & 1), cj = j + ((e.corner >> 1) & 1), ck = k + ((e.corner >> 2) & 1);
    const std::uint64_t key = ((static_cast<std::uint64_t>(ck) * py + cj) * px + ci) * 3 + static_cast<unsigned>(e.axis);
    const auto [it, inserted] = vertex_of.emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (inserted) {
      Vec3 p{double(ci), double(cj), double(ck)};
      p[e.axis] += 0.5;
      for (int a = 0; a < 3; ++a) p[a] = (p[a] - 1.0) * spacing_mm[a];
      mesh.vertices.push_back(p);
    }
    return it->second;
  };

  for (std::size_t k = 0; k + 1 < pz; ++k)
    for (std::size_t j = 0; j + 1 < py; ++j)
      for (std::size_t i = 0; i + 1 < px; ++i) {
        int cfg = 0;
        for (int c = 0; c < 8; ++c) cfg |= value(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) << c;
        if (t.triangles[cfg].empty()) continue;
        std::array<std::uint32_t, 16> id;
        id.fill(UINT32_MAX);
        auto index = [&](int slot) {
          if (id[slot] != UINT32_MAX) return id[slot];
          if (slot < 12) return id[slot] = vertex(i, j, k, t.edges[slot]);
          Vec3 c{0, 0, 0};
          const auto& loop = t.hubs[cfg][slot - 12];
          for (int e : loop) {
            const Vec3 m = edge_mid(t.edges[e]);
            for (int a = 0; a < 3; ++a) c[a] += m[a] / static_cast<double>(loop.size());
          }
          const double origin[3] = {double(i), double(j), double(k)};
          for (int a = 0; a < 3; ++a) c[a] = (origin[a] + c[a] - 1.0) * spacing_mm[a];
          mesh.vertices.push_back(c);
          return id[slot] = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
        };
        for (const auto& tri : t.triangles[cfg]) mesh.triangles.push_back({index(tri[0]), index(tri[1]), index(tri[2])});
      }
  return mesh;
}

TriangleMesh extract_surface(const BinaryMask3D& mask, double spacing_mm) {
  return extract_surface(mask, {spacing_mm, spacing_mm, spacing_mm});
}

MeshStats mesh_stats(const TriangleMesh& mesh) {
  std::vector<std::uint64_t> edges;
  edges.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) edges.push_back(edge_key(t[k], t[(k + 1) % 3]));
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  MeshStats s;
  s.vertices = mesh.vertices.size();
  s.edges = edges.size();
  s.triangles = mesh.triangles.size();
  s.euler_characteristic = static_cast<long>(s.vertices) - static_cast<long>(s.edges) + static_cast<long>(s.triangles);
  return s;
}

long euler_characteristic(const TriangleMesh& mesh) { return mesh_stats(mesh).euler_characteristic; }

bool is_watertight(const TriangleMesh& mesh) {
  std::unordered_map<std::uint64_t, int> uses;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) ++uses[edge_key(t[k], t[(k + 1) % 3])];
  return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

bool is_consistently_oriented(const TriangleMesh& mesh) {
  std::unordered_map<std::uint64_t, int> directed;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const std::uint64_t a = t[k], b = t[(k + 1) % 3];
      if (++directed[(a << 32) | b] > 1) return false;
    }
  for (const auto& [key, n] : directed)
    if (!directed.count((key << 32) | (key >> 32))) return false;
  return true;
}

double signed_volume(const TriangleMesh& mesh) {
  double v = 0;
  for (const auto& t : mesh.triangles)
    v += dot(mesh.vertices[t[0]], cross(mesh.vertices[t[1]], mesh.vertices[t[2]]));
  return v / 6.0;
}

void validate_mesh(const TriangleMesh& mesh) {
  for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
    const auto& t = mesh.triangles[f];
    for (auto idx : t)
      if (idx >= mesh.vertices.size())
        throw std::invalid_argument("mesh: triangle " + std::to_string(f) + " references vertex " +
                                    std::to_string(idx) + " of " + std::to_string(mesh.vertices.size()));
    const Vec3 n = cross(sub(mesh.vertices[t[1]], mesh.vertices[t[0]]), sub(mesh.vertices[t[2]], mesh.vertices[t[0]]));
    if (0.5 * std::sqrt(dot(n, n)) <= 1e-12)
      throw std::invalid_argument("mesh: triangle " + std::to_string(f) + " is degenerate");
  }
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  validate_mesh(mesh);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "# cardioseg surface: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw std::runtime_error("error writing " + path.string());
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  TriangleMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    auto bad = [&] { return std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": malformed record"); };
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v[0] >> v[1] >> v[2])) throw bad();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<std::uint32_t, 3> t{};
      for (auto& idx : t) {
        std::string tok;
        if (!(ls >> tok)) throw bad();
        const long one_based = std::stol(tok.substr(0, tok.find('/')));
        if (one_based < 1) throw bad();
        idx = static_cast<std::uint32_t>(one_based - 1);
      }
      std::string extra;
      if (ls >> extra) throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": only triangles are supported");
      mesh.triangles.push_back(t);
    }
  }
  validate_mesh(mesh);
  return mesh;
}

}  // namespace cardioseg
