#include "cardioseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace cardioseg {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Tree reduction; overwrites the buffer. Exact for equal values and power-of-two counts.
template <typename T>
T pairwise_sum(std::vector<T>& v) {
  std::size_t n = v.size();
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) v[i] = v[2 * i] + v[2 * i + 1];
    if (n % 2) v[half] = v[n - 1];
    n = half + n % 2;
  }
  return n ? v[0] : T{0};
}

// Sum of f(0..n) in double with eight interleaved accumulators: vectorizes
// while keeping a fixed summation order.
template <typename F>
double lane_sum(std::size_t n, F&& f) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += f(i + k);
  double tail = 0.0;
  for (; i < n; ++i) tail += f(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t out_h, out_w;
  std::size_t stride, padding;

  std::size_t patch() const { return in_channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, std::size_t stride,
                           std::size_t padding) {
  require_nchw(input, "conv2d input");
  require_nchw(weights, "conv2d weights");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (weights.extent(1) != input.channels())
    throw ShapeError("conv2d: weights expect " + std::to_string(weights.extent(1)) + " input channels, input " +
                     shape_string(input.shape()) + " has " + std::to_string(input.channels()));
  ConvGeometry g{};
  g.batch = input.batch();
  g.in_channels = input.channels();
  g.height = input.height();
  g.width = input.width();
  g.out_channels = weights.extent(0);
  g.kh = weights.extent(2);
  g.kw = weights.extent(3);
  g.stride = stride;
  g.padding = padding;
  g.out_h = conv_output_extent(g.height, g.kh, stride, padding);
  g.out_w = conv_output_extent(g.width, g.kw, stride, padding);
  return g;
}

// Output columns [lo, hi) of a row whose input column ox * stride - pad + kx
// falls inside [0, w).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_columns(std::ptrdiff_t out_w, std::ptrdiff_t w,
                                                               std::ptrdiff_t stride, std::ptrdiff_t offset) {
  // ox * stride + offset >= 0  and  ox * stride + offset < w
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t hi = w - offset <= 0 ? 0 : (w - offset + stride - 1) / stride;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
  return {lo, hi};
}

// Column matrix: rows indexed by (c, ky, kx), columns by output pixel.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const auto out_w = static_cast<std::ptrdiff_t>(g.out_w);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* src = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto [lo, hi] = valid_columns(out_w, w, stride, offset);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ky);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + out_w, T{0});
            continue;
          }
          const T* src_row = src + iy * w + offset;
          std::fill(row, row + lo, T{0});
          if (stride == 1) {
            std::copy(src_row + lo, src_row + hi, row + lo);
          } else {
            for (std::ptrdiff_t ox = lo; ox < hi; ++ox) row[ox] = src_row[ox * stride];
          }
          std::fill(row + hi, row + out_w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const auto out_w = static_cast<std::ptrdiff_t>(g.out_w);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* dst = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto [lo, hi] = valid_columns(out_w, w, stride, offset);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= h) continue;
          const T* row = src + oy * g.out_w;
          T* dst_row = dst + iy * w + offset;
          for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst_row[ox * stride] += row[ox];
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; contents are unspecified.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<T> buffers[4];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Stride-1 convolution without an explicit column matrix. The input is
// zero-padded once; output rows are computed on the padded width, so each
// kernel tap (ky, kx) is a single GEMM against the padded planes shifted by
// ky * wp + kx. The last kw - 1 columns of every computed row are discarded.
struct ShiftedLayout {
  std::size_t hp, wp;   // padded extent
  std::size_t plane;    // hp * wp
  std::size_t cols;     // out_h * wp
  std::size_t taps;     // kh * kw

  explicit ShiftedLayout(const ConvGeometry& g)
      : hp(g.height + 2 * g.padding),
        wp(g.width + 2 * g.padding),
        plane(hp * wp),
        cols(g.out_h * wp),
        taps(g.kh * g.kw) {}
  std::size_t offset(std::size_t tap, const ConvGeometry& g) const { return (tap / g.kw) * wp + tap % g.kw; }
  // Padded planes plus the over-read of the last row of the last channel.
  std::size_t padded_size(std::size_t channels, const ConvGeometry& g) const { return channels * plane + g.kw; }
};

template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// Weights of one tap as a Cout x Cin view into the Cout x Cin x kh x kw tensor.
template <typename T>
ConstStridedMap<T> tap_weights(const T* w, const ConvGeometry& g, std::size_t tap) {
  const auto taps = static_cast<Eigen::Index>(g.kh * g.kw);
  return ConstStridedMap<T>(w + tap, g.out_channels, g.in_channels,
                            Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(taps * g.in_channels, taps));
}

template <typename T>
void pad_planes(const T* image, const ConvGeometry& g, const ShiftedLayout& L, T* padded) {
  std::fill(padded, padded + L.padded_size(g.in_channels, g), T{0});
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t y = 0; y < g.height; ++y) {
      const T* src = image + (c * g.height + y) * g.width;
      std::copy(src, src + g.width, padded + c * L.plane + (y + g.padding) * L.wp + g.padding);
    }
}

template <typename T>
void shifted_forward(const T* image, const T* weights, const ConvGeometry& g, T* out) {
  const ShiftedLayout L(g);
  T* padded = scratch<T>(0, L.padded_size(g.in_channels, g));
  T* wide = scratch<T>(1, g.out_channels * L.cols);
  pad_planes(image, g, L, padded);
  MatrixMap<T> y(wide, g.out_channels, L.cols);
  for (std::size_t tap = 0; tap < L.taps; ++tap) {
    Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> x(padded + L.offset(tap, g), g.in_channels, L.cols,
                                                              Eigen::OuterStride<>(L.plane));
    if (tap == 0) y.noalias() = tap_weights(weights, g, tap) * x;
    else y.noalias() += tap_weights(weights, g, tap) * x;
  }
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const T* src = wide + o * L.cols + oy * L.wp;
      std::copy(src, src + g.out_w, out + (o * g.out_h + oy) * g.out_w);
    }
}

template <typename T>
void shifted_backward(const T* image, const T* weights, const T* dy, const ConvGeometry& g, T* dx, T* dw) {
  const ShiftedLayout L(g);
  T* padded = scratch<T>(0, L.padded_size(g.in_channels, g));
  T* wide = scratch<T>(1, g.out_channels * L.cols);
  T* dpadded = scratch<T>(2, L.padded_size(g.in_channels, g));
  pad_planes(image, g, L, padded);
  // Output gradient on the padded width; the discarded columns carry zero.
  std::fill(wide, wide + g.out_channels * L.cols, T{0});
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const T* src = dy + (o * g.out_h + oy) * g.out_w;
      std::copy(src, src + g.out_w, wide + o * L.cols + oy * L.wp);
    }
  std::fill(dpadded, dpadded + L.padded_size(g.in_channels, g), T{0});
  ConstMatrixMap<T> dyw(wide, g.out_channels, L.cols);
  const auto taps = static_cast<Eigen::Index>(L.taps);
  for (std::size_t tap = 0; tap < L.taps; ++tap) {
    const std::size_t off = L.offset(tap, g);
    Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> x(padded + off, g.in_channels, L.cols,
                                                              Eigen::OuterStride<>(L.plane));
    StridedMap<T> dwt(dw + tap, g.out_channels, g.in_channels,
                      Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(taps * g.in_channels, taps));
    dwt.noalias() += dyw * x.transpose();
    // Rows of this view overlap only inside padding, which is discarded below.
    Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> dxs(dpadded + off, g.in_channels, L.cols,
                                                          Eigen::OuterStride<>(L.plane));
    dxs.noalias() += tap_weights(weights, g, tap).transpose() * dyw;
  }
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t y = 0; y < g.height; ++y) {
      const T* src = dpadded + c * L.plane + (y + g.padding) * L.wp + g.padding;
      T* dst = dx + (c * g.height + y) * g.width;
      for (std::size_t x = 0; x < g.width; ++x) dst[x] += src[x];
    }
}

template <typename T>
void require_channel_vector(const Tensor<T>& v, std::size_t channels, const char* what) {
  if (v.rank() != 1 || v.extent(0) != channels)
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(channels) + ", got " +
                     shape_string(v.shape()));
}

}  // namespace

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (extent + 2 * padding < kernel)
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded extent " +
                     std::to_string(extent + 2 * padding));
  return (extent + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weights, stride, padding);
  require_channel_vector(bias, g.out_channels, "conv2d bias");

  auto out = Tensor<T>::nchw(g.batch, g.out_channels, g.out_h, g.out_w);
  const bool shifted = g.stride == 1 && !g.pointwise();
  T* col = g.pointwise() || shifted ? nullptr : scratch<T>(0, g.patch() * g.pixels());
  ConstMatrixMap<T> w(weights.data(), g.out_channels, g.patch());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), g.out_channels);

  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = input.plane(n, 0);
    MatrixMap<T> y(out.plane(n, 0), g.out_channels, g.pixels());
    if (shifted) {
      shifted_forward(image, weights.data(), g, out.plane(n, 0));
      y.colwise() += b;
      continue;
    }
    const T* cols = image;
    if (!g.pointwise()) {
      im2col(image, g, col);
      cols = col;
    }
    y.noalias() = w * ConstMatrixMap<T>(cols, g.patch(), g.pixels());
    y.colwise() += b;
  }
  return out;
}

template <typename T>
LayerGradients<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, std::size_t stride,
                                  std::size_t padding, const Tensor<T>& output_grad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, padding);
  const Shape expected{g.batch, g.out_channels, g.out_h, g.out_w};
  if (output_grad.shape() != expected)
    throw ShapeError("conv2d_backward: output gradient " + shape_string(output_grad.shape()) + ", expected " +
                     shape_string(expected));

  LayerGradients<T> grads;
  grads.input_grad = Tensor<T>(input.shape());
  Tensor<T> weight_grad(weights.shape());
  Tensor<T> bias_grad(Shape{g.out_channels});

  const bool shifted = g.stride == 1 && !g.pointwise();
  T* col = g.pointwise() || shifted ? nullptr : scratch<T>(0, g.patch() * g.pixels());
  T* dcol = g.pointwise() || shifted ? nullptr : scratch<T>(1, g.patch() * g.pixels());
  ConstMatrixMap<T> w(weights.data(), g.out_channels, g.patch());
  MatrixMap<T> dw(weight_grad.data(), g.out_channels, g.patch());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_grad.data(), g.out_channels);

  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatrixMap<T> dy(output_grad.plane(n, 0), g.out_channels, g.pixels());
    const T* image = input.plane(n, 0);
    if (shifted) {
      shifted_backward(image, weights.data(), output_grad.plane(n, 0), g, grads.input_grad.plane(n, 0),
                       weight_grad.data());
    } else if (g.pointwise()) {
      dw.noalias() += dy * ConstMatrixMap<T>(image, g.patch(), g.pixels()).transpose();
      MatrixMap<T>(grads.input_grad.plane(n, 0), g.patch(), g.pixels()).noalias() = w.transpose() * dy;
    } else {
      im2col(image, g, col);
      dw.noalias() += dy * ConstMatrixMap<T>(col, g.patch(), g.pixels()).transpose();
      MatrixMap<T>(dcol, g.patch(), g.pixels()).noalias() = w.transpose() * dy;
      col2im(dcol, g, grads.input_grad.plane(n, 0));
    }
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const T* row = output_grad.plane(n, o);
      db[o] += static_cast<T>(lane_sum(g.pixels(), [row](std::size_t i) { return static_cast<double>(row[i]); }));
    }
  }
  grads.param_grads.emplace("weight", std::move(weight_grad));
  grads.param_grads.emplace("bias", std::move(bias_grad));
  return grads;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_batch_norm_args(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const BatchNormStats<T>& running, const BatchNormConfig& cfg) {
  require_nchw(input, "batch_norm input");
  if (!(cfg.epsilon > 0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  const std::size_t c = input.channels();
  require_channel_vector(gamma, c, "batch_norm gamma");
  require_channel_vector(beta, c, "batch_norm beta");
  require_channel_vector(running.mean, c, "batch_norm running mean");
  require_channel_vector(running.variance, c, "batch_norm running variance");
  if (input.batch() * input.height() * input.width() == 0)
    throw ShapeError("batch_norm: zero batch x spatial extent in " + shape_string(input.shape()));
}

template <typename T>
Tensor<T> normalize_with(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const std::vector<double>& mean, const std::vector<double>& inv_std,
                         BatchNormCache<T>* cache) {
  const std::size_t hw = input.height() * input.width();
  Tensor<T> out(input.shape());
  Tensor<T> normalized = cache ? Tensor<T>(input.shape()) : Tensor<T>();
  for (std::size_t n = 0; n < input.batch(); ++n) {
    for (std::size_t c = 0; c < input.channels(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      const T m = static_cast<T>(mean[c]);
      const T s = static_cast<T>(inv_std[c]);
      const T g = gamma[c];
      const T b = beta[c];
      T* xh = cache ? normalized.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < hw; ++i) {
        const T v = (x[i] - m) * s;
        if (xh) xh[i] = v;
        y[i] = g * v + b;
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                     BatchNormStats<T>& running, const BatchNormConfig& cfg, BatchNormCache<T>* cache) {
  if (mode == Mode::inference) return batch_norm_inference(input, gamma, beta, running, cfg, cache);
  check_batch_norm_args(input, gamma, beta, running, cfg);

  const std::size_t channels = input.channels();
  const std::size_t hw = input.height() * input.width();
  const double count = static_cast<double>(input.batch() * hw);
  std::vector<double> mean(channels, 0.0), var(channels, 0.0), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < input.batch(); ++n) {
      const T* x = input.plane(n, c);
      sum += lane_sum(hw, [x](std::size_t i) { return static_cast<double>(x[i]); });
    }
    mean[c] = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < input.batch(); ++n) {
      const T* x = input.plane(n, c);
      const double m = mean[c];
      sq += lane_sum(hw, [x, m](std::size_t i) {
        const double d = x[i] - m;
        return d * d;
      });
    }
    var[c] = sq / count;
    inv_std[c] = 1.0 / std::sqrt(var[c] + cfg.epsilon);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    running.mean[c] = static_cast<T>(cfg.momentum * running.mean[c] + (1.0 - cfg.momentum) * mean[c]);
    running.variance[c] = static_cast<T>(cfg.momentum * running.variance[c] + (1.0 - cfg.momentum) * var[c]);
  }
  if (cache) cache->mode = Mode::train;
  return normalize_with(input, gamma, beta, mean, inv_std, cache);
}

template <typename T>
Tensor<T> batch_norm_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                               const BatchNormStats<T>& running, const BatchNormConfig& cfg,
                               BatchNormCache<T>* cache) {
  check_batch_norm_args(input, gamma, beta, running, cfg);
  const std::size_t channels = input.channels();
  std::vector<double> mean(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    mean[c] = running.mean[c];
    inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running.variance[c]) + cfg.epsilon);
  }
  if (cache) cache->mode = Mode::inference;
  return normalize_with(input, gamma, beta, mean, inv_std, cache);
}

template <typename T>
LayerGradients<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                      const Tensor<T>& output_grad) {
  require_same_shape(cache.normalized, output_grad, "batch_norm_backward");
  const Tensor<T>& xh = cache.normalized;
  const std::size_t channels = xh.channels();
  const std::size_t hw = xh.height() * xh.width();
  const double count = static_cast<double>(xh.batch() * hw);

  LayerGradients<T> grads;
  grads.input_grad = Tensor<T>(xh.shape());
  Tensor<T> dgamma(Shape{channels});
  Tensor<T> dbeta(Shape{channels});

  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < xh.batch(); ++n) {
      const T* dy = output_grad.plane(n, c);
      const T* x = xh.plane(n, c);
      sum_dy += lane_sum(hw, [dy](std::size_t i) { return static_cast<double>(dy[i]); });
      sum_dy_xh += lane_sum(hw, [dy, x](std::size_t i) { return static_cast<double>(dy[i]) * x[i]; });
    }
    dgamma[c] = static_cast<T>(sum_dy_xh);
    dbeta[c] = static_cast<T>(sum_dy);

    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < xh.batch(); ++n) {
      const T* dy = output_grad.plane(n, c);
      const T* x = xh.plane(n, c);
      T* dx = grads.input_grad.plane(n, c);
      if (cache.mode == Mode::train) {
        const T k = static_cast<T>(scale);
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
        for (std::size_t i = 0; i < hw; ++i) dx[i] = k * (dy[i] - mean_dy - x[i] * mean_dy_xh);
      } else {
        const T k = static_cast<T>(scale);
        for (std::size_t i = 0; i < hw; ++i) dx[i] = k * dy[i];
      }
    }
  }
  grads.param_grads.emplace("gamma", std::move(dgamma));
  grads.param_grads.emplace("beta", std::move(dbeta));
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) y[i] = x[i] >= T{0} ? x[i] : slope * x[i];
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& output_grad, T slope) {
  require_same_shape(input, output_grad, "leaky_relu_backward");
  Tensor<T> out(input.shape());
  const T* x = input.data();
  const T* dy = output_grad.data();
  T* dx = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = x[i] >= T{0} ? dy[i] : slope * dy[i];
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (x[i] >= T{0}) {
      y[i] = T{1} / (T{1} + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T{1} + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& output_grad) {
  require_same_shape(output, output_grad, "sigmoid_backward");
  Tensor<T> out(output.shape());
  const T* y = output.data();
  const T* dy = output_grad.data();
  T* dx = out.data();
  for (std::size_t i = 0; i < output.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> downscale(const Tensor<T>& input, std::size_t factor) {
  require_nchw(input, "downscale");
  if (factor == 0) throw std::invalid_argument("downscale: factor must be positive");
  if (input.height() % factor || input.width() % factor)
    throw ShapeError("downscale: extent " + shape_string(input.shape()) + " not divisible by " +
                     std::to_string(factor));
  if (factor == 1) return input;
  const std::size_t oh = input.height() / factor, ow = input.width() / factor;
  auto out = Tensor<T>::nchw(input.batch(), input.channels(), oh, ow);
  const T norm = T{1} / static_cast<T>(factor * factor);
  std::vector<T> block(factor * factor);
  for (std::size_t n = 0; n < input.batch(); ++n) {
    for (std::size_t c = 0; c < input.channels(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          for (std::size_t dy = 0; dy < factor; ++dy) {
            const T* row = x + (oy * factor + dy) * input.width() + ox * factor;
            std::copy(row, row + factor, block.begin() + dy * factor);
          }
          y[oy * ow + ox] = pairwise_sum(block) * norm;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> downscale_backward(const Tensor<T>& output_grad, std::size_t factor) {
  require_nchw(output_grad, "downscale_backward");
  if (factor == 0) throw std::invalid_argument("downscale_backward: factor must be positive");
  Tensor<T> spread = upscale(output_grad, factor);
  if (factor == 1) return spread;
  const T norm = T{1} / static_cast<T>(factor * factor);
  for (auto& v : spread.values()) v *= norm;
  return spread;
}

template <typename T>
Tensor<T> upscale(const Tensor<T>& input, std::size_t factor) {
  require_nchw(input, "upscale");
  if (factor == 0) throw std::invalid_argument("upscale: factor must be positive");
  if (factor == 1) return input;
  const std::size_t h = input.height(), w = input.width();
  auto out = Tensor<T>::nchw(input.batch(), input.channels(), h * factor, w * factor);
  for (std::size_t n = 0; n < input.batch(); ++n) {
    for (std::size_t c = 0; c < input.channels(); ++c) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      for (std::size_t oy = 0; oy < h * factor; ++oy) {
        const T* src = x + (oy / factor) * w;
        T* dst = y + oy * w * factor;
        for (std::size_t ox = 0; ox < w * factor; ++ox) dst[ox] = src[ox / factor];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upscale_backward(const Tensor<T>& output_grad, std::size_t factor) {
  require_nchw(output_grad, "upscale_backward");
  if (factor == 0) throw std::invalid_argument("upscale_backward: factor must be positive");
  if (output_grad.height() % factor || output_grad.width() % factor)
    throw ShapeError("upscale_backward: extent " + shape_string(output_grad.shape()) + " not divisible by " +
                     std::to_string(factor));
  if (factor == 1) return output_grad;
  Tensor<T> pooled = downscale(output_grad, factor);
  const T count = static_cast<T>(factor * factor);
  for (auto& v : pooled.values()) v *= count;
  return pooled;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_nchw(a, "concat_channels");
  require_nchw(b, "concat_channels");
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
    throw ShapeError("concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  const std::size_t hw = a.height() * a.width();
  auto out = Tensor<T>::nchw(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (std::size_t n = 0; n < a.batch(); ++n) {
    if (a.channels()) std::memcpy(out.plane(n, 0), a.plane(n, 0), a.channels() * hw * sizeof(T));
    if (b.channels()) std::memcpy(out.plane(n, a.channels()), b.plane(n, 0), b.channels() * hw * sizeof(T));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first_channels) {
  require_nchw(t, "split_channels");
  if (first_channels > t.channels())
    throw ShapeError("split_channels: cannot take " + std::to_string(first_channels) + " channels from " +
                     shape_string(t.shape()));
  const std::size_t hw = t.height() * t.width();
  const std::size_t rest = t.channels() - first_channels;
  auto a = Tensor<T>::nchw(t.batch(), first_channels, t.height(), t.width());
  auto b = Tensor<T>::nchw(t.batch(), rest, t.height(), t.width());
  for (std::size_t n = 0; n < t.batch(); ++n) {
    if (first_channels) std::memcpy(a.plane(n, 0), t.plane(n, 0), first_channels * hw * sizeof(T));
    if (rest) std::memcpy(b.plane(n, 0), t.plane(n, first_channels), rest * hw * sizeof(T));
  }
  return {std::move(a), std::move(b)};
}

#define CARDIOSEG_INSTANTIATE_LAYERS(T)                                                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);   \
  template LayerGradients<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,     \
                                             const Tensor<T>&);                                                \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Mode, BatchNormStats<T>&, \
                                const BatchNormConfig&, BatchNormCache<T>*);                                   \
  template Tensor<T> batch_norm_inference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                          const BatchNormStats<T>&, const BatchNormConfig&, BatchNormCache<T>*); \
  template LayerGradients<T> batch_norm_backward(const BatchNormCache<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                          \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> downscale(const Tensor<T>&, std::size_t);                                                 \
  template Tensor<T> downscale_backward(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> upscale(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> upscale_backward(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                      \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);

CARDIOSEG_INSTANTIATE_LAYERS(float)
CARDIOSEG_INSTANTIATE_LAYERS(double)

}  // namespace cardioseg
