#include "cardioseg/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "cardioseg/layers.hpp"
#include "cardioseg/loss.hpp"
#include "cardioseg/networks.hpp"

namespace cardioseg {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(ops.begin(), ops.end(), [](const OpCheck& c) { return c.passed(); });
}

std::vector<std::string> GradcheckReport::offenders() const {
  std::vector<std::string> out;
  for (const auto& c : ops)
    if (!c.passed()) out.push_back(c.name);
  return out;
}

std::string GradcheckReport::format() const {
  std::ostringstream out;
  for (const auto& c : ops) {
    out << std::left << std::setw(22) << c.name << " max_rel_error " << std::scientific << std::setprecision(3)
        << c.max_rel_error << "  threshold " << c.threshold << "  evals " << std::defaultfloat << c.evaluations
        << "  " << (c.passed() ? "PASS" : "FAIL") << '\n';
  }
  return out.str();
}

namespace {

using TensorD = Tensor<double>;
using Rng = std::mt19937_64;

TensorD random_tensor(const Shape& shape, Rng& rng, double gap = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  TensorD t(shape);
  for (auto& v : t.values()) {
    v = n(rng);
    if (gap > 0 && std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  return t;
}

TensorD uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double weighted_sum(const TensorD& y, const TensorD& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

class Checker {
 public:
  explicit Checker(const GradcheckOptions& opts) : opts_(opts) {}

  /// Compares `analytic` against central differences of `f` with respect to
  /// every element of `x`.
  void compare(const std::string& op, TensorD& x, TensorD analytic, const std::function<double()>& f,
               double floor = 1e-6) {
    if (op == opts_.inject_fault)
      for (auto& g : analytic.values()) g = g * 1.01 + 1e-3;
    OpCheck& c = entry(op, opts_.layer_threshold);
    const double h = opts_.step;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      x[i] = v + h;
      const double fp = f();
      x[i] = v - h;
      const double fm = f();
      x[i] = v;
      c.max_rel_error = std::max(c.max_rel_error, relative_error(analytic[i], (fp - fm) / (2 * h), floor));
      ++c.evaluations;
    }
  }

  OpCheck& entry(const std::string& op, double threshold) {
    for (auto& c : report_.ops)
      if (c.name == op) return c;
    report_.ops.push_back({op, 0.0, threshold, 0});
    return report_.ops.back();
  }

  GradcheckReport take() { return std::move(report_); }
  const GradcheckOptions& opts() const { return opts_; }

 private:
  const GradcheckOptions& opts_;
  GradcheckReport report_;
};

void check_conv(Checker& ck, Rng& rng) {
  struct Config {
    std::size_t kernel, stride, padding;
  };
  for (const Config cfg : {Config{3, 1, 1}, Config{3, 2, 0}, Config{1, 1, 0}}) {
    TensorD x = random_tensor({2, 3, 7, 7}, rng);
    TensorD w = random_tensor({4, 3, cfg.kernel, cfg.kernel}, rng);
    TensorD b = random_tensor({4}, rng);
    const TensorD y0 = conv2d(x, w, b, cfg.stride, cfg.padding);
    const TensorD r = random_tensor(y0.shape(), rng);
    const auto g = conv2d_backward(x, w, cfg.stride, cfg.padding, r);
    auto f = [&] { return weighted_sum(conv2d(x, w, b, cfg.stride, cfg.padding), r); };
    ck.compare("conv2d", x, g.input_grad, f);
    ck.compare("conv2d", w, g.param_grads.at("weight"), f);
    ck.compare("conv2d", b, g.param_grads.at("bias"), f);
  }
}

void check_batch_norm(Checker& ck, Rng& rng) {
  const BatchNormConfig cfg;
  TensorD x = random_tensor({2, 3, 4, 4}, rng);
  TensorD gamma = random_tensor({3}, rng);
  TensorD beta = random_tensor({3}, rng);
  const TensorD r = random_tensor(x.shape(), rng);
  {
    BatchNormStats<double> running{TensorD({3}), TensorD({3}, 1.0)};
    BatchNormCache<double> cache;
    batch_norm(x, gamma, beta, Mode::train, running, cfg, &cache);
    const auto g = batch_norm_backward(cache, gamma, r);
    auto f = [&] {
      BatchNormStats<double> scratch{TensorD({3}), TensorD({3}, 1.0)};
      return weighted_sum(batch_norm(x, gamma, beta, Mode::train, scratch, cfg), r);
    };
    ck.compare("batch_norm", x, g.input_grad, f);
    ck.compare("batch_norm", gamma, g.param_grads.at("gamma"), f);
    ck.compare("batch_norm", beta, g.param_grads.at("beta"), f);
  }
  {
    const BatchNormStats<double> running{random_tensor({3}, rng), uniform_tensor({3}, rng, 0.5, 2.0)};
    BatchNormCache<double> cache;
    batch_norm_inference(x, gamma, beta, running, cfg, &cache);
    const auto g = batch_norm_backward(cache, gamma, r);
    auto f = [&] { return weighted_sum(batch_norm_inference(x, gamma, beta, running, cfg), r); };
    ck.compare("batch_norm_inference", x, g.input_grad, f);
    ck.compare("batch_norm_inference", gamma, g.param_grads.at("gamma"), f);
    ck.compare("batch_norm_inference", beta, g.param_grads.at("beta"), f);
  }
}

void check_elementwise(Checker& ck, Rng& rng) {
  {
    // Keep inputs away from the kink so the central difference does not straddle it.
    TensorD x = random_tensor({2, 3, 5, 5}, rng, 0.05);
    const TensorD r = random_tensor(x.shape(), rng);
    ck.compare("leaky_relu", x, leaky_relu_backward(x, r), [&] { return weighted_sum(leaky_relu(x), r); });
  }
  {
    TensorD x = random_tensor({2, 3, 5, 5}, rng);
    x.values()[0] = 30.0;  // saturated tail
    x.values()[1] = -30.0;
    const TensorD r = random_tensor(x.shape(), rng);
    ck.compare("sigmoid", x, sigmoid_backward(sigmoid(x), r), [&] { return weighted_sum(sigmoid(x), r); });
  }
}

void check_resampling(Checker& ck, Rng& rng) {
  {
    TensorD x = random_tensor({2, 3, 8, 8}, rng);
    const TensorD r = random_tensor({2, 3, 4, 4}, rng);
    ck.compare("downscale", x, downscale_backward(r, 2), [&] { return weighted_sum(downscale(x, 2), r); });
  }
  {
    TensorD x = random_tensor({2, 3, 4, 4}, rng);
    const TensorD r = random_tensor({2, 3, 8, 8}, rng);
    ck.compare("upscale", x, upscale_backward(r, 2), [&] { return weighted_sum(upscale(x, 2), r); });
  }
  {
    TensorD a = random_tensor({2, 2, 4, 4}, rng);
    TensorD b = random_tensor({2, 3, 4, 4}, rng);
    const TensorD r = random_tensor({2, 5, 4, 4}, rng);
    const auto [ga, gb] = split_channels(r, 2);
    auto f = [&] { return weighted_sum(concat_channels(a, b), r); };
    ck.compare("concat_channels", a, ga, f);
    ck.compare("concat_channels", b, gb, f);
  }
}

void check_pixel_loss(Checker& ck, Rng& rng) {
  const LossConfig cfg;
  OpCheck& c = ck.entry("pixel_loss", ck.opts().loss_threshold);
  std::uniform_real_distribution<double> u(1e-3, 1.0 - 1e-3);
  std::size_t accepted = 0;
  while (accepted < 400) {
    const double p = u(rng);
    const double g = (accepted % 2) ? 1.0 : 0.0;
    const double q = cfg.a * p + cfg.b;
    // Skip points within 1e-3 of the dead-zone boundary |g - q| = t.
    if (std::abs(std::abs(g - q) - cfg.t) < 1e-3) continue;
    ++accepted;
    // Step small relative to the distance of q from 0 and 1 so the central
    // difference stays accurate where the logarithm is steep.
    const double h = 1e-3 * std::min(q, 1.0 - q) / cfg.a;
    double analytic = pixel_loss_grad(p, g, cfg);
    if (ck.opts().inject_fault == "pixel_loss") analytic = analytic * 1.01 + 1e-3;
    const double numeric = (pixel_loss(p + h, g, cfg) - pixel_loss(p - h, g, cfg)) / (2 * h);
    c.max_rel_error = std::max(c.max_rel_error, relative_error(analytic, numeric));
    ++c.evaluations;
  }
}

void check_multiscale_loss(Checker& ck, Rng& rng) {
  NetOutput<double> preds;
  preds.scales = {2, 4, 8};
  // Predictions stay clear of the dead-zone edges at t and 1 - t.
  for (std::size_t s : preds.scales) preds.masks.push_back(uniform_tensor({1, 1, s, s}, rng, 0.05, 0.95));
  TensorD gt({1, 1, 8, 8});
  std::bernoulli_distribution coin(0.4);
  for (auto& v : gt.values()) v = coin(rng) ? 1.0 : 0.0;
  std::vector<TensorD> grads;
  multiscale_loss(NetworkKind::init, preds, gt, LossConfig{}, &grads);
  for (std::size_t s = 0; s < preds.masks.size(); ++s)
    ck.compare("multiscale_loss", preds.masks[s], grads[s],
               [&] { return multiscale_loss(NetworkKind::init, preds, gt, LossConfig{}).total; });
}

void check_network(Checker& ck, Rng& rng, NetworkKind kind, std::uint64_t seed) {
  ArchSpec arch = ArchSpec::defaults(kind);
  arch.image_size = 8;
  arch.widths = {3, 4, 3};
  ModelParameters<double> params = init_parameters<double>(arch, seed);
  const TensorD input = random_tensor({1, arch.image_channels(), 8, 8}, rng);
  NetworkTape<double> tape;
  const NetOutput<double> out = forward(params, input, Mode::train, &tape);
  std::vector<TensorD> r;
  for (const auto& m : out.masks) r.push_back(random_tensor(m.shape(), rng));
  ModelParameters<double> grads = zeros_like(params);
  backward(params, tape, r, grads);

  auto f = [&] {
    const NetOutput<double> o = forward(params, input, Mode::train);
    double s = 0;
    for (std::size_t i = 0; i < o.masks.size(); ++i) s += weighted_sum(o.masks[i], r[i]);
    return s;
  };
  std::vector<TensorD*> values;
  std::vector<const TensorD*> analytic;
  for_each_tensor(params, [&](const std::string&, TensorD& t, ParamRole role) {
    if (role == ParamRole::learnable) values.push_back(&t);
  });
  for_each_tensor(grads, [&](const std::string&, TensorD& t, ParamRole role) {
    if (role == ParamRole::learnable) analytic.push_back(&t);
  });
  const std::string name = std::string("network_") + to_string(kind);
  for (std::size_t i = 0; i < values.size(); ++i) ck.compare(name, *values[i], *analytic[i], f, ck.opts().network_floor);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  Checker ck(opts);
  for (std::uint64_t seed : opts.seeds) {
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + 17);
    check_conv(ck, rng);
    check_batch_norm(ck, rng);
    check_elementwise(ck, rng);
    check_resampling(ck, rng);
    check_pixel_loss(ck, rng);
    check_multiscale_loss(ck, rng);
    if (opts.include_network) {
      check_network(ck, rng, NetworkKind::init, seed);
      check_network(ck, rng, NetworkKind::propagation, seed);
    }
  }
  GradcheckReport report = ck.take();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cardioseg
