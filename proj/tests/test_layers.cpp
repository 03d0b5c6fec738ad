#include "doctest.h"

#include <cmath>
#include <random>

#include "cardioseg/layers.hpp"
#include "reference_conv.hpp"
#include "test_support.hpp"

using namespace cardioseg;
using testing_support::random_tensor;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Central difference of f(t) = <g, F(t)> at every element of t.
template <typename F>
double max_fd_error(Tensor<double>& t, const Tensor<double>& analytic, F&& scalar_fn, double h = 1e-5) {
  double worst = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const double up = scalar_fn();
    t[i] = keep - h;
    const double dn = scalar_fn();
    t[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (up - dn) / (2 * h)));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 against all-ones kernel sums to 9") {
  Tensor<double> x(Shape{1, 1, 3, 3}, 1.0), w(Shape{1, 1, 3, 3}, 1.0), b(Shape{1}, 0.0);
  auto y = conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 9.0);
}

TEST_CASE("conv2d matches the naive reference on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> nd(1, 2), cd(1, 4), sd(1, 16), kd(0, 2), st(1, 2), pd(0, 2);
  const std::size_t kernels[] = {1, 3, 5};
  double worst = 0;
  int checked = 0;
  while (checked < 100) {
    const std::size_t n = nd(rng), ci = cd(rng), co = cd(rng), h = sd(rng), w = sd(rng);
    const std::size_t k = kernels[kd(rng)], s = st(rng), p = pd(rng);
    if (h + 2 * p < k || w + 2 * p < k) continue;
    auto x = random_tensor<double>(Shape{n, ci, h, w}, rng);
    auto wt = random_tensor<double>(Shape{co, ci, k, k}, rng);
    auto b = random_tensor<double>(Shape{co}, rng);
    auto got = conv2d(x, wt, b, s, p);
    auto want = testing_support::naive_conv(x, wt, b, s, p);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    ++checked;
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("conv2d gradients match central differences") {
  std::mt19937_64 rng(7);
  auto x = random_tensor<double>(Shape{2, 3, 8, 8}, rng);
  auto w = random_tensor<double>(Shape{4, 3, 3, 3}, rng);
  auto b = random_tensor<double>(Shape{4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    auto probe = random_tensor<double>(conv2d(x, w, b, stride, 1).shape(), rng);
    auto g = conv2d_backward(x, w, stride, 1, probe);
    auto f = [&] { return dot(probe, conv2d(x, w, b, stride, 1)); };
    CHECK(max_fd_error(w, g.param_grads.at("weight"), f) < 1e-4);
    CHECK(max_fd_error(x, g.input_grad, f) < 1e-4);
    CHECK(max_fd_error(b, g.param_grads.at("bias"), f) < 1e-4);
  }
}

TEST_CASE("conv2d rejects mismatched channels and zero stride") {
  Tensor<double> x(Shape{1, 2, 5, 5}), w(Shape{1, 3, 3, 3}), b(Shape{1});
  CHECK_THROWS_AS(conv2d(x, w, b, 1, 1), ShapeError);
  Tensor<double> w2(Shape{1, 2, 3, 3});
  CHECK_THROWS(conv2d(x, w2, b, 0, 1));
  CHECK(conv_output_extent(128, 3, 1, 1) == 128);
  CHECK(conv_output_extent(8, 3, 2, 0) == 3);
}

TEST_CASE("batch_norm: values {1, 3} normalize to {-1, +1}") {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 3.0});
  Tensor<double> gamma(Shape{1}, 1.0), beta(Shape{1}, 0.0);
  BatchNormStats<double> run{Tensor<double>(Shape{1}, 0.0), Tensor<double>(Shape{1}, 1.0)};
  BatchNormConfig cfg;
  cfg.epsilon = 1e-12;
  auto y = batch_norm(x, gamma, beta, Mode::train, run, cfg);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("batch_norm updates running statistics with momentum 0.9 and biased variance") {
  Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1.0, 3.0, 5.0, 7.0});
  Tensor<double> gamma(Shape{1}, 1.0), beta(Shape{1}, 0.0);
  BatchNormStats<double> run{Tensor<double>(Shape{1}, 0.0), Tensor<double>(Shape{1}, 1.0)};
  batch_norm(x, gamma, beta, Mode::train, run, BatchNormConfig{});
  // mean 4, biased variance (9 + 1 + 1 + 9) / 4 = 5
  CHECK(run.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 4.0));
  CHECK(run.variance[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 5.0));
}

TEST_CASE("batch_norm inference uses running statistics and leaves them alone") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>(Shape{2, 2, 3, 3}, rng);
  Tensor<double> gamma(Shape{2}, std::vector<double>{2.0, 0.5}), beta(Shape{2}, std::vector<double>{0.1, -0.2});
  BatchNormStats<double> run{Tensor<double>(Shape{2}, std::vector<double>{0.3, -0.1}),
                             Tensor<double>(Shape{2}, std::vector<double>{4.0, 0.25})};
  const auto before = run;
  BatchNormConfig cfg;
  auto y = batch_norm(x, gamma, beta, Mode::inference, run, cfg);
  CHECK(run.mean == before.mean);
  CHECK(run.variance == before.variance);
  for (std::size_t c = 0; c < 2; ++c) {
    const double inv = 1.0 / std::sqrt(run.variance[c] + cfg.epsilon);
    CHECK(y.at(1, c, 2, 1) == doctest::Approx(gamma[c] * (x.at(1, c, 2, 1) - run.mean[c]) * inv + beta[c]));
  }
  CHECK(batch_norm_inference(x, gamma, beta, run, cfg) == y);
}

TEST_CASE("batch_norm gradients match central differences") {
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto gamma = random_tensor<double>(Shape{3}, rng, 0.5, 1.5);
  auto beta = random_tensor<double>(Shape{3}, rng);
  auto probe = random_tensor<double>(x.shape(), rng);
  BatchNormStats<double> run{Tensor<double>(Shape{3}, 0.0), Tensor<double>(Shape{3}, 1.0)};
  BatchNormCache<double> cache;
  batch_norm(x, gamma, beta, Mode::train, run, BatchNormConfig{}, &cache);
  auto g = batch_norm_backward(cache, gamma, probe);
  auto f = [&] {
    BatchNormStats<double> scratch{Tensor<double>(Shape{3}, 0.0), Tensor<double>(Shape{3}, 1.0)};
    return dot(probe, batch_norm(x, gamma, beta, Mode::train, scratch, BatchNormConfig{}));
  };
  CHECK(max_fd_error(gamma, g.param_grads.at("gamma"), f) < 1e-4);
  CHECK(max_fd_error(beta, g.param_grads.at("beta"), f) < 1e-4);
  CHECK(max_fd_error(x, g.input_grad, f) < 1e-4);
}

TEST_CASE("leaky_relu with slope 0.25") {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{-4.0, -1.0, 2.0});
  auto y = leaky_relu(x);
  CHECK(y[0] == -1.0);
  CHECK(y[2] == 2.0);
  auto g = leaky_relu_backward(x, Tensor<double>(x.shape(), 1.0));
  CHECK(g[1] == 0.25);
  CHECK(g[2] == 1.0);
}

TEST_CASE("sigmoid is stable and has slope 1/4 at zero") {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.0, -800.0, 800.0});
  auto y = sigmoid(x);
  CHECK(y[0] == 0.5);
  CHECK(y.all_finite());
  CHECK(y[1] >= 0.0);
  CHECK(y[2] <= 1.0);
  auto g = sigmoid_backward(y, Tensor<double>(x.shape(), 1.0));
  CHECK(g[0] == 0.25);
  Tensor<float> xf(Shape{1, 1, 1, 2}, std::vector<float>{-60.0f, 60.0f});
  CHECK(sigmoid(xf).all_finite());
}

TEST_CASE("activation gradients match central differences") {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>(Shape{1, 2, 5, 5}, rng, -3.0, 3.0);
  for (auto& v : x.storage())
    if (std::abs(v) < 0.05) v += 0.1;
  auto probe = random_tensor<double>(x.shape(), rng);
  auto gl = leaky_relu_backward(x, probe);
  CHECK(max_fd_error(x, gl, [&] { return dot(probe, leaky_relu(x)); }) < 1e-4);
  auto gs = sigmoid_backward(sigmoid(x), probe);
  CHECK(max_fd_error(x, gs, [&] { return dot(probe, sigmoid(x)); }) < 1e-4);
}

TEST_CASE("downscale averages blocks and conserves mass") {
  Tensor<double> block(Shape{1, 1, 2, 2}, std::vector<double>{1, 1, 3, 3});
  CHECK(downscale(block, 2)[0] == 2.0);
  Tensor<double> ramp(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = double(i);
  auto d = downscale(ramp, 2);
  double in = 0, out = 0;
  for (double v : ramp.storage()) in += v;
  for (double v : d.storage()) out += v;
  CHECK(out * 4 == in);
  CHECK_THROWS_AS(downscale(Tensor<double>(Shape{1, 1, 3, 4}), 2), ShapeError);
}

TEST_CASE("upscale backward of ones gives the replication count") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>(Shape{1, 1, 4, 4}, rng);
  auto up = upscale(x, 2);
  REQUIRE(up.shape() == Shape{1, 1, 8, 8});
  CHECK(up.at(0, 0, 5, 3) == x.at(0, 0, 2, 1));
  auto g = upscale_backward(Tensor<double>(up.shape(), 1.0), 2);
  for (double v : g.storage()) CHECK(v == 4.0);
}

TEST_CASE("scale-change gradients match central differences") {
  std::mt19937_64 rng(9);
  auto x = random_tensor<double>(Shape{2, 2, 4, 4}, rng);
  auto pd = random_tensor<double>(Shape{2, 2, 2, 2}, rng);
  CHECK(max_fd_error(x, downscale_backward(pd, 2), [&] { return dot(pd, downscale(x, 2)); }) < 1e-4);
  auto pu = random_tensor<double>(Shape{2, 2, 8, 8}, rng);
  CHECK(max_fd_error(x, upscale_backward(pu, 2), [&] { return dot(pu, upscale(x, 2)); }) < 1e-4);
}

TEST_CASE("property: downscale after upscale is the identity, upscale after downscale keeps block means") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<double>(Shape{1, 2, 8, 8}, rng);
    for (std::size_t f : {2u, 4u}) {
      auto blocks = downscale(x, f);
      CHECK(downscale(upscale(blocks, f), f) == blocks);
      auto y = upscale(blocks, f);
      auto again = downscale(y, f);
      for (std::size_t i = 0; i < blocks.size(); ++i) CHECK(again[i] == doctest::Approx(blocks[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("split inverts concat bit-identically") {
  std::mt19937_64 rng(17);
  auto a = random_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto b = random_tensor<double>(Shape{2, 1, 4, 4}, rng);
  auto [a2, b2] = split_channels(concat_channels(a, b), 3);
  CHECK(a2 == a);
  CHECK(b2 == b);
  auto empty = Tensor<double>::nchw(2, 0, 4, 4);
  CHECK(concat_channels(a, empty) == a);
  CHECK_THROWS_AS(concat_channels(a, Tensor<double>(Shape{2, 1, 4, 5})), ShapeError);
}

TEST_CASE("property: forward ops keep finite inputs finite") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor<float>(Shape{1, 2, 8, 8}, rng, -1e3, 1e3);
    auto w = random_tensor<float>(Shape{3, 2, 3, 3}, rng);
    auto b = random_tensor<float>(Shape{3}, rng);
    auto y = conv2d(x, w, b, 1, 1);
    CHECK(y.all_finite());
    BatchNormStats<float> run{Tensor<float>(Shape{3}, 0.0f), Tensor<float>(Shape{3}, 1.0f)};
    auto n = batch_norm(y, Tensor<float>(Shape{3}, 1.0f), Tensor<float>(Shape{3}, 0.0f), Mode::train, run,
                        BatchNormConfig{});
    CHECK(n.all_finite());
    CHECK(sigmoid(leaky_relu(n)).all_finite());
    CHECK(upscale(downscale(n, 2), 2).all_finite());
  }
}
