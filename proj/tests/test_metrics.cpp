#include "doctest.h"

#include <fstream>
#include <random>

#include "cardioseg/metrics.hpp"
#include "test_support.hpp"

using namespace cardioseg;

namespace {

BinaryMask3D random_stack(std::mt19937_64& rng, std::array<std::size_t, 3> dims, double density) {
  Grid g;
  g.dims = dims;
  g.base_index = dims[2] - 1;
  BinaryMask3D m(g);
  std::bernoulli_distribution b(density);
  for (auto& v : m.data) v = b(rng);
  return m;
}

}  // namespace

TEST_CASE("dice of 100 and 100 voxels overlapping in 50 is 0.5") {
  std::vector<std::uint8_t> a(300, 0), b(300, 0);
  for (int i = 0; i < 100; ++i) a[i] = 1;
  for (int i = 50; i < 150; ++i) b[i] = 1;
  CHECK(dice(a, b) == 0.5);
  std::vector<std::uint8_t> empty(300, 0);
  CHECK(dice(empty, empty) == 1.0);
  CHECK(dice(a, empty) == 0.0);
  CHECK_THROWS(dice(a, std::vector<std::uint8_t>(10)));
}

TEST_CASE("stack with per-slice dice 0.5 and equal sizes pools to 0.5") {
  Grid g;
  g.dims = {4, 1, 3};
  g.base_index = 2;
  BinaryMask3D a(g), b(g);
  for (std::size_t z = 0; z < 3; ++z) {
    a.at(0, 0, z) = a.at(1, 0, z) = 1;
    b.at(1, 0, z) = b.at(2, 0, z) = 1;
  }
  for (std::size_t z = 0; z < 3; ++z) CHECK(dice_2d(a, z, b, z) == 0.5);
  CHECK(dice_3d(a, b) == 0.5);
}

TEST_CASE("dice_3d pools voxels rather than averaging slices") {
  Grid g;
  g.dims = {10, 1, 2};
  g.base_index = 1;
  BinaryMask3D a(g), b(g);
  for (std::size_t x = 0; x < 10; ++x) a.at(x, 0, 0) = b.at(x, 0, 0) = 1;  // slice 0: dice 1 over 10 voxels
  a.at(0, 0, 1) = 1;                                                       // slice 1: dice 0 over 2 voxels
  b.at(1, 0, 1) = 1;
  CHECK(dice_3d(a, b) == doctest::Approx(20.0 / 22.0));
  CHECK(dice_3d(a, b) != doctest::Approx(0.5));
}

TEST_CASE("property: dice_3d matches a brute-force count, is symmetric, bounded, and 1 iff identical") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const double density = (trial % 5) * 0.2;
    auto a = random_stack(rng, {5, 4, 3}, density);
    auto b = trial % 7 == 0 ? a : random_stack(rng, {5, 4, 3}, 0.3);
    std::size_t inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      inter += a.data[i] && b.data[i];
      sa += a.data[i];
      sb += b.data[i];
    }
    const double want = sa + sb == 0 ? 1.0 : 2.0 * double(inter) / double(sa + sb);
    const double d = dice_3d(a, b);
    CHECK(d == doctest::Approx(want).epsilon(1e-15));
    CHECK(d == dice_3d(b, a));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK((d == 1.0) == (a.data == b.data));
    for (std::size_t z = 0; z < 3; ++z) CHECK(dice_2d(a, z, b, z) == dice_2d(b, z, a, z));
  }
}

TEST_CASE("slice profile and its smoothness statistic") {
  Grid g;
  g.dims = {4, 1, 3};
  g.base_index = 2;
  BinaryMask3D gt(g), pred(g);
  for (std::size_t z = 0; z < 3; ++z) gt.at(0, 0, z) = gt.at(1, 0, z) = 1;
  pred = gt;
  pred.at(1, 0, 1) = 0;  // slice 1 dice 2/3
  auto prof = slicewise_dice_profile(pred, gt);
  REQUIRE(prof.dice.size() == 3);
  CHECK(prof.dice[0] == 1.0);
  CHECK(prof.dice[1] == doctest::Approx(2.0 / 3.0));
  CHECK(prof.max_jump == doctest::Approx(1.0 / 3.0));

  testing_support::TempDir dir("prof");
  write_profile_csv(dir / "p.csv", prof);
  std::ifstream in(dir / "p.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "slice_index,dice");
  std::getline(in, line);
  CHECK(line.rfind("0,", 0) == 0);
}

TEST_CASE("slice_range extracts an inclusive range") {
  std::mt19937_64 rng(2);
  auto m = random_stack(rng, {3, 3, 6}, 0.5);
  auto r = slice_range(m, 1, 3);
  CHECK(r.grid.dims[2] == 3);
  CHECK(std::equal(r.slice(0).begin(), r.slice(0).end(), m.slice(1).begin()));
  CHECK_THROWS(slice_range(m, 4, 6));
}
