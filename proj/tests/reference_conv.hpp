#pragma once

#include "cardioseg/tensor.hpp"

namespace testing_support {

// Direct quadruple-loop cross-correlation with zero padding.
inline cardioseg::Tensor<double> naive_conv(const cardioseg::Tensor<double>& x, const cardioseg::Tensor<double>& w,
                                            const cardioseg::Tensor<double>& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.batch(), ci = x.channels(), h = x.height(), wd = x.width();
  const std::size_t co = w.extent(0), k = w.extent(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  auto out = cardioseg::Tensor<double>::nchw(n, co, oh, ow);
  for (std::size_t b_ = 0; b_ < n; ++b_)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(y * stride + ky) - long(pad), ix = long(xx * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += w.at(o, c, ky, kx) * x.at(b_, c, std::size_t(iy), std::size_t(ix));
              }
          out.at(b_, o, y, xx) = acc;
        }
  return out;
}

}  // namespace testing_support
