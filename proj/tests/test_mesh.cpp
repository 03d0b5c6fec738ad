#include "doctest.h"

#include <fstream>
#include <random>

#include "cardioseg/mesh.hpp"
#include "test_support.hpp"

using namespace cardioseg;

namespace {

BinaryMask3D blank(std::size_t n) {
  Grid g;
  g.dims = {n, n, n};
  g.base_index = n - 1;
  return BinaryMask3D(g);
}

BinaryMask3D ball(std::size_t n, double r) {
  auto m = blank(n);
  const double c = (double(n) - 1) / 2;
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = x - c, dy = y - c, dz = z - c;
        m.at(x, y, z) = dx * dx + dy * dy + dz * dz <= r * r;
      }
  return m;
}

// Annulus extruded through the middle slices.
BinaryMask3D torus(std::size_t n, double r_out, double r_in, std::size_t z0, std::size_t z1) {
  auto m = blank(n);
  const double c = (double(n) - 1) / 2;
  for (std::size_t z = z0; z <= z1; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double d2 = (x - c) * (x - c) + (y - c) * (y - c);
        m.at(x, y, z) = d2 <= r_out * r_out && d2 > r_in * r_in;
      }
  return m;
}

void check_closed(const TriangleMesh& mesh) {
  CHECK(is_watertight(mesh));
  CHECK(is_consistently_oriented(mesh));
  CHECK(signed_volume(mesh) > 0.0);
  CHECK_NOTHROW(validate_mesh(mesh));
}

TriangleMesh unit_cube() {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) m.vertices.push_back({double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)});
  const std::uint32_t f[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                  {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  for (auto& t : f) m.triangles.push_back({t[0], t[1], t[2]});
  return m;
}

}  // namespace

TEST_CASE("empty mask gives an empty mesh") {
  auto mesh = extract_surface(blank(4), 1.0);
  CHECK(mesh.empty());
  CHECK(mesh.triangle_count() == 0);
}

TEST_CASE("single interior voxel is a closed sphere") {
  auto m = blank(3);
  m.at(1, 1, 1) = 1;
  auto mesh = extract_surface(m, 1.25);
  CHECK(euler_characteristic(mesh) == 2);
  check_closed(mesh);
}

TEST_CASE("voxel ball has Euler characteristic 2") {
  auto mesh = extract_surface(ball(16, 6.0), 1.0);
  CHECK(mesh_stats(mesh).euler_characteristic == 2);
  check_closed(mesh);
}

TEST_CASE("solid torus has Euler characteristic 0") {
  auto mesh = extract_surface(torus(24, 9.0, 4.0, 8, 15), 1.0);
  CHECK(euler_characteristic(mesh) == 0);
  check_closed(mesh);
}

TEST_CASE("foreground touching the volume border still closes") {
  auto m = blank(4);
  std::fill(m.data.begin(), m.data.end(), 1);
  auto mesh = extract_surface(m, 1.0);
  CHECK(euler_characteristic(mesh) == 2);
  check_closed(mesh);
}

TEST_CASE("diagonal voxels stay separate components") {
  auto m = blank(4);
  m.at(1, 1, 1) = m.at(2, 2, 1) = 1;
  auto mesh = extract_surface(m, 1.0);
  CHECK(euler_characteristic(mesh) == 4);
  check_closed(mesh);
}

TEST_CASE("property: random blobs give closed oriented surfaces inside the padded bounds") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = blank(7);
    std::bernoulli_distribution b(0.1 + 0.02 * trial);
    for (auto& v : m.data) v = b(rng);
    const std::array<double, 3> sp{1.25, 0.5, 2.0};
    auto mesh = extract_surface(m, sp);
    if (mesh.empty()) continue;
    CHECK(is_watertight(mesh));
    CHECK(is_consistently_oriented(mesh));
    CHECK_NOTHROW(validate_mesh(mesh));
    for (const auto& v : mesh.vertices)
      for (int a = 0; a < 3; ++a) {
        CHECK(v[a] >= -sp[a]);
        CHECK(v[a] <= 7 * sp[a]);
      }
    CHECK(extract_surface(m, sp) == mesh);
  }
}

TEST_CASE("spacing scales vertices and volume") {
  auto m = ball(10, 3.5);
  auto a = extract_surface(m, 1.0), b = extract_surface(m, 2.0);
  CHECK(signed_volume(b) == doctest::Approx(8 * signed_volume(a)));
}

TEST_CASE("OBJ round trip") {
  testing_support::TempDir dir("obj");
  auto mesh = extract_surface(ball(10, 3.5), std::array<double, 3>{1.25, 1.25, 2.5});
  write_obj(mesh, dir / "ball.obj");
  CHECK(read_obj(dir / "ball.obj") == mesh);

  write_obj(unit_cube(), dir / "cube.obj");
  std::ifstream in(dir / "cube.obj");
  std::size_t v = 0, f = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("f ", 0) == 0) ++f;
  }
  CHECK(v >= 8);
  CHECK(f == 12);
  auto cube = read_obj(dir / "cube.obj");
  CHECK_NOTHROW(validate_mesh(cube));
  check_closed(cube);
  CHECK(signed_volume(cube) == doctest::Approx(1.0));

  write_obj(TriangleMesh{}, dir / "empty.obj");
  CHECK(read_obj(dir / "empty.obj").empty());
  CHECK_THROWS(write_obj(mesh, dir / "no_such_dir" / "x.obj"));
}

TEST_CASE("invalid meshes are rejected") {
  TriangleMesh m = unit_cube();
  m.triangles.push_back({0, 1, 8});
  CHECK_THROWS(validate_mesh(m));
  m = unit_cube();
  m.triangles.push_back({0, 0, 1});
  CHECK_THROWS(validate_mesh(m));
  testing_support::TempDir dir("badobj");
  {
    std::ofstream out(dir / "quad.obj");
    out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
  }
  CHECK_THROWS(read_obj(dir / "quad.obj"));
  {
    std::ofstream out(dir / "range.obj");
    out << "v 0 0 0\nf 1 2 3\n";
  }
  CHECK_THROWS(read_obj(dir / "range.obj"));
}
