#include "doctest.h"

#include <fstream>
#include <random>

#include "cardioseg/checkpoint.hpp"
#include "test_support.hpp"

using namespace cardioseg;

TEST_CASE("checkpoint round trip keeps every tensor and forward output bit-identical") {
  auto p = init_parameters<float>(NetworkKind::propagation, 21);
  p.subnets[0].groups[1].running.mean[2] = 0.123f;
  auto bytes = serialize_checkpoint(p);
  CHECK(bytes.substr(0, 4) == "CSEG");
  auto q = deserialize_checkpoint(bytes);
  CHECK(q.arch == p.arch);
  CHECK(serialize_checkpoint(q) == bytes);

  std::mt19937_64 rng(21);
  auto x = testing_support::random_tensor<float>(Shape{1, 6, 128, 128}, rng, 0.0, 1.0);
  auto a = forward(p, x), b = forward(q, x);
  for (std::size_t s = 0; s < a.masks.size(); ++s) CHECK(a.masks[s] == b.masks[s]);
}

TEST_CASE("checkpoint files round trip and enforce the network kind") {
  testing_support::TempDir dir("ckpt");
  auto p = init_parameters<float>(NetworkKind::init, 1);
  save_checkpoint(p, dir / "init.cseg");
  auto q = load_checkpoint(dir / "init.cseg", NetworkKind::init);
  CHECK(serialize_checkpoint(q) == serialize_checkpoint(p));
  CHECK_THROWS_AS(load_checkpoint(dir / "init.cseg", NetworkKind::propagation), FormatError);
  CHECK_THROWS(load_checkpoint(dir / "missing.cseg"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto bytes = serialize_checkpoint(init_parameters<float>(NetworkKind::init, 2));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
}

TEST_CASE("checkpoints store the declared architecture verbatim") {
  ArchSpec a = ArchSpec::defaults(NetworkKind::init);
  a.image_size = 16;
  a.widths = {5, 7};
  a.leaky_slope = 0.1;
  a.batch_norm.momentum = 0.8;
  auto p = init_parameters<float>(a, 3);
  auto q = deserialize_checkpoint(serialize_checkpoint(p));
  CHECK(q.arch == a);
  CHECK(q.subnets[0].groups[1].weight.shape() == Shape{7, 5, 3, 3});
}
