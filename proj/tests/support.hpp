/* Copyright 2026 the rornet authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License. */

// Independent oracles used by the test suites. Everything here is written
// as plain nested loops on purpose: these are the reference computations
// the library implementations are checked against, so they must not share
// code paths with the library.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rornet/tensor.hpp"

namespace oracle {

// Direct 6-loop cross-correlation, NCHW input and OIHW kernel.
template <class Real>
rornet::Tensor<Real> naive_conv2d(const rornet::Tensor<Real>& x,
                                  const rornet::Tensor<Real>& k, int stride,
                                  int pad) {
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2),
                    w = x.extent(3);
  const std::size_t cout = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  const std::size_t oh = (h + 2 * static_cast<std::size_t>(pad) - kh) /
                             static_cast<std::size_t>(stride) +
                         1;
  const std::size_t ow = (w + 2 * static_cast<std::size_t>(pad) - kw) /
                             static_cast<std::size_t>(stride) +
                         1;
  rornet::Tensor<Real> y(rornet::Shape{n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                acc += static_cast<double>(
                           x.data()[((b * cin + ci) * h +
                                     static_cast<std::size_t>(iy)) *
                                        w +
                                    static_cast<std::size_t>(ix)]) *
                       static_cast<double>(
                           k.data()[((co * cin + ci) * kh + ky) * kw + kx]);
              }
          y.at4(b, co, oy, ox) = static_cast<Real>(acc);
        }
  return y;
}

// Triple-loop affine map, x (N, F), w (K, F), b (K).
template <class Real>
rornet::Tensor<Real> naive_linear(const rornet::Tensor<Real>& x,
                                  const rornet::Tensor<Real>& w,
                                  const rornet::Tensor<Real>& b) {
  const std::size_t n = x.extent(0), f = x.extent(1), k = w.extent(0);
  rornet::Tensor<Real> y(rornet::Shape{n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < k; ++o) {
      double acc = static_cast<double>(b.data()[o]);
      for (std::size_t j = 0; j < f; ++j)
        acc += static_cast<double>(x.data()[i * f + j]) *
               static_cast<double>(w.data()[o * f + j]);
      y.data()[i * k + o] = static_cast<Real>(acc);
    }
  return y;
}

template <class Real>
double max_rel_diff(const rornet::Tensor<Real>& a,
                    const rornet::Tensor<Real>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double av = a.data()[i], bv = b.data()[i];
    const double mag = std::max(std::abs(av), std::abs(bv));
    if (mag < 1e-12) continue;
    worst = std::max(worst, std::abs(av - bv) / mag);
  }
  return worst;
}

template <class Real>
double max_abs_diff(const rornet::Tensor<Real>& a,
                    const rornet::Tensor<Real>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                     static_cast<double>(b.data()[i])));
  return worst;
}

}  // namespace oracle
