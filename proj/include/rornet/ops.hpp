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

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rornet/tape.hpp"
#include "rornet/tensor.hpp"

namespace rornet {

enum class BnMode { kTrain, kEval };

template <class Real>
struct RunningStats {
  std::vector<Real> mean;
  std::vector<Real> var;
  bool populated = false;

  static RunningStats identity(std::size_t channels) {
    RunningStats s;
    s.mean.assign(channels, Real(0));
    s.var.assign(channels, Real(1));
    s.populated = true;
    return s;
  }
};

namespace ops {

namespace detail {

template <class Real>
using MatRM =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Real>
bool any_requires_grad(std::initializer_list<const Tensor<Real>*> ts) {
  for (auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// col has Cin*kh*kw rows and N*OH*OW columns; one column per output site.
template <class Real>
void im2col(const TensorStorage<Real>& x, std::size_t kh, std::size_t kw,
            int stride, int pad, std::size_t oh, std::size_t ow,
            std::vector<Real>& col) {
  const std::size_t n = x.shape[0], cin = x.shape[1], h = x.shape[2],
                    w = x.shape[3];
  const std::size_t cols = n * oh * ow;
  col.assign(cin * kh * kw * cols, Real(0));
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        Real* row = col.data() + ((ci * kh + ky) * kw + kx) * cols;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy) * stride + ky - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const Real* src = x.data.data() + ((b * cin + ci) * h + iy) * w;
            Real* dst = row + (b * oh + oy) * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox) * stride + kx - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[ox] = src[ix];
            }
          }
      }
}

template <class Real>
void col2im_add(const std::vector<Real>& col, std::size_t kh, std::size_t kw,
                int stride, int pad, std::size_t oh, std::size_t ow,
                TensorStorage<Real>& dx) {
  const std::size_t n = dx.shape[0], cin = dx.shape[1], h = dx.shape[2],
                    w = dx.shape[3];
  const std::size_t cols = n * oh * ow;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const Real* row = col.data() + ((ci * kh + ky) * kw + kx) * cols;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy) * stride + ky - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            Real* dst = dx.grad.data() + ((b * cin + ci) * h + iy) * w;
            const Real* src = row + (b * oh + oy) * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox) * stride + kx - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[ix] += src[ox];
            }
          }
      }
}

}  // namespace detail

/// 2-d cross-correlation. Input is NCHW, kernel is (out, in, kH, kW); no
/// bias term (the networks here follow every convolution with batch norm).
template <class Real>
Tensor<Real> conv2d(Tape<Real>* tape, const Tensor<Real>& x,
                    const Tensor<Real>& kernel, int stride, int pad) {
  if (x.rank() != 4 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and kernel, got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (x.extent(1) != kernel.extent(1))
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(x.extent(1)) +
        " do not match kernel in-channels " + std::to_string(kernel.extent(1)) +
        " (input " + shape_str(x.shape()) + ", kernel " +
        shape_str(kernel.shape()) + ")");

  const std::size_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = kernel.extent(0), kh = kernel.extent(2),
                    kw = kernel.extent(3);
  const std::ptrdiff_t oh_s =
      (static_cast<std::ptrdiff_t>(h) + 2 * pad - static_cast<std::ptrdiff_t>(kh)) / stride + 1;
  const std::ptrdiff_t ow_s =
      (static_cast<std::ptrdiff_t>(w) + 2 * pad - static_cast<std::ptrdiff_t>(kw)) / stride + 1;
  if (oh_s < 1 || ow_s < 1)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                " does not fit input " + shape_str(x.shape()) +
                                " with pad " + std::to_string(pad));
  const std::size_t oh = static_cast<std::size_t>(oh_s),
                    ow = static_cast<std::size_t>(ow_s);

  using Mat = detail::MatRM<Real>;
  const std::size_t rows = x.extent(1) * kh * kw, cols = n * oh * ow;
  std::vector<Real> col;
  detail::im2col(*x.storage(), kh, kw, stride, pad, oh, ow, col);
  Eigen::Map<const Mat> kmat(kernel.data().data(), cout, rows);
  Eigen::Map<const Mat> cmat(col.data(), rows, cols);
  Mat ymat = kmat * cmat;

  Tensor<Real> y(Shape{n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      const Real* src = ymat.data() + co * cols + (b * oh) * ow;
      Real* dst = y.data().data() + (b * cout + co) * oh * ow;
      std::copy(src, src + oh * ow, dst);
    }

  if (tape && detail::any_requires_grad<Real>({&x, &kernel})) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ks = kernel.storage(), ys = y.storage();
    tape->record("conv2d", {xs, ks}, ys, [=]() {
      Eigen::Map<const Mat> km(ks->data.data(), cout, rows);
      Mat dymat(cout, cols);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < cout; ++co) {
          const Real* src = ys->grad.data() + (b * cout + co) * oh * ow;
          std::copy(src, src + oh * ow, dymat.data() + co * cols + b * oh * ow);
        }
      if (ks->requires_grad) {
        std::vector<Real> col2;
        detail::im2col(*xs, kh, kw, stride, pad, oh, ow, col2);
        Eigen::Map<const Mat> cm(col2.data(), rows, cols);
        Eigen::Map<Mat> dk(ks->grad.data(), cout, rows);
        dk.noalias() += dymat * cm.transpose();
      }
      if (xs->requires_grad) {
        std::vector<Real> dcol(rows * cols);
        Eigen::Map<Mat> dcm(dcol.data(), rows, cols);
        dcm.noalias() = km.transpose() * dymat;
        detail::col2im_add(dcol, kh, kw, stride, pad, oh, ow, *xs);
      }
    });
  }
  return y;
}

/// Per-channel batch normalization over NCHW activations. Train mode uses
/// batch statistics (biased variance) and folds them into the running
/// stats with the given momentum; eval mode uses the running stats.
template <class Real>
Tensor<Real> batch_norm(Tape<Real>* tape, const Tensor<Real>& x,
                        const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        BnMode mode, RunningStats<Real>& stats,
                        Real eps = Real(1e-5), Real momentum = Real(0.1)) {
  if (x.rank() != 4)
    throw std::invalid_argument("batch_norm: expected 4-d input, got " +
                                shape_str(x.shape()));
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2),
                    w = x.extent(3);
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument(
        "batch_norm: gamma/beta sizes " + std::to_string(gamma.size()) + "/" +
        std::to_string(beta.size()) + " do not match channel count " +
        std::to_string(c));
  if (mode == BnMode::kEval && !stats.populated)
    throw std::invalid_argument(
        "batch_norm: eval mode requires populated running statistics");

  const std::size_t plane = h * w;
  const std::size_t m = n * plane;

  std::vector<Real> mean(c), invstd(c);
  if (mode == BnMode::kTrain) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const Real* p = x.data().data() + (b * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const Real* p = x.data().data() + (b * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(m);
      mean[ci] = static_cast<Real>(mu);
      invstd[ci] = static_cast<Real>(1.0 / std::sqrt(var + eps));
      if (stats.mean.size() != c) {
        stats.mean.assign(c, Real(0));
        stats.var.assign(c, Real(1));
      }
      stats.mean[ci] = (Real(1) - momentum) * stats.mean[ci] +
                       momentum * static_cast<Real>(mu);
      stats.var[ci] =
          (Real(1) - momentum) * stats.var[ci] + momentum * static_cast<Real>(var);
    }
    stats.populated = true;
  } else {
    for (std::size_t ci = 0; ci < c; ++ci) {
      mean[ci] = stats.mean[ci];
      invstd[ci] = static_cast<Real>(
          1.0 / std::sqrt(static_cast<double>(stats.var[ci]) + eps));
    }
  }

  Tensor<Real> y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const Real* p = x.data().data() + (b * c + ci) * plane;
      Real* q = y.data().data() + (b * c + ci) * plane;
      const Real g = gamma.data()[ci], bt = beta.data()[ci];
      for (std::size_t i = 0; i < plane; ++i)
        q[i] = g * (p[i] - mean[ci]) * invstd[ci] + bt;
    }

  if (tape && detail::any_requires_grad<Real>({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(),
         ys = y.storage();
    const bool train = mode == BnMode::kTrain;
    tape->record("batch_norm", {xs, gs, bs}, ys,
                 [=, mean = std::move(mean), invstd = std::move(invstd)]() {
      for (std::size_t ci = 0; ci < c; ++ci) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const Real* dy = ys->grad.data() + (b * c + ci) * plane;
          const Real* px = xs->data.data() + (b * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (px[i] - mean[ci]) * invstd[ci];
          }
        }
        if (gs->requires_grad) gs->grad[ci] += static_cast<Real>(sum_dy_xhat);
        if (bs->requires_grad) bs->grad[ci] += static_cast<Real>(sum_dy);
        if (xs->requires_grad) {
          const Real g = gs->data[ci];
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            const Real* dy = ys->grad.data() + (b * c + ci) * plane;
            const Real* px = xs->data.data() + (b * c + ci) * plane;
            Real* dx = xs->grad.data() + (b * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                const double xhat = (px[i] - mean[ci]) * invstd[ci];
                dx[i] += static_cast<Real>(
                    g * invstd[ci] *
                    (dy[i] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat));
              } else {
                dx[i] += g * invstd[ci] * dy[i];
              }
            }
          }
        }
      }
    });
  }
  return y;
}

/// Elementwise max(0, x). The subgradient at exactly zero is taken as 0.
template <class Real>
Tensor<Real> relu(Tape<Real>* tape, const Tensor<Real>& x) {
  Tensor<Real> y(x.shape());
  std::uint64_t pattern = 1469598103934665603ull;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool pos = x.data()[i] > Real(0);
    y.data()[i] = pos ? x.data()[i] : Real(0);
    pattern = (pattern ^ (pos ? 0x9eu : 0x31u)) * 1099511628211ull;
  }
  if (tape) {
    tape->note_pattern(pattern);
    if (x.requires_grad()) {
      y.set_requires_grad(true);
      auto xs = x.storage(), ys = y.storage();
      tape->record("relu", {xs}, ys, [=]() {
        if (!xs->requires_grad) return;
        for (std::size_t i = 0; i < xs->data.size(); ++i)
          if (xs->data[i] > Real(0)) xs->grad[i] += ys->grad[i];
      });
    }
  }
  return y;
}

/// Spatial mean per channel: NCHW -> (N, C).
template <class Real>
Tensor<Real> global_avg_pool(Tape<Real>* tape, const Tensor<Real>& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("global_avg_pool: expected 4-d input, got " +
                                shape_str(x.shape()));
  const std::size_t n = x.extent(0), c = x.extent(1),
                    plane = x.extent(2) * x.extent(3);
  Tensor<Real> y(Shape{n, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      const Real* p = x.data().data() + (b * c + ci) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.data()[b * c + ci] = static_cast<Real>(s / static_cast<double>(plane));
    }
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    tape->record("global_avg_pool", {xs}, ys, [=]() {
      if (!xs->requires_grad) return;
      const Real inv = Real(1) / static_cast<Real>(plane);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ci = 0; ci < c; ++ci) {
          const Real g = ys->grad[b * c + ci] * inv;
          Real* dx = xs->grad.data() + (b * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) dx[i] += g;
        }
    });
  }
  return y;
}

/// Affine map y = x W^T + b with x (N, F), W (K, F), b (K).
template <class Real>
Tensor<Real> linear(Tape<Real>* tape, const Tensor<Real>& x,
                    const Tensor<Real>& weight, const Tensor<Real>& bias) {
  if (x.rank() != 2 || weight.rank() != 2)
    throw std::invalid_argument("linear: expected 2-d input and weight, got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(weight.shape()));
  if (x.extent(1) != weight.extent(1))
    throw std::invalid_argument(
        "linear: input features " + std::to_string(x.extent(1)) +
        " do not match weight columns " + std::to_string(weight.extent(1)) +
        " (input " + shape_str(x.shape()) + ", weight " +
        shape_str(weight.shape()) + ")");
  if (bias.size() != weight.extent(0))
    throw std::invalid_argument("linear: bias size " +
                                std::to_string(bias.size()) +
                                " does not match output count " +
                                std::to_string(weight.extent(0)));

  using Mat = detail::MatRM<Real>;
  const std::size_t n = x.extent(0), f = x.extent(1), k = weight.extent(0);
  Tensor<Real> y(Shape{n, k});
  Eigen::Map<const Mat> xm(x.data().data(), n, f);
  Eigen::Map<const Mat> wm(weight.data().data(), k, f);
  Eigen::Map<Mat> ym(y.data().data(), n, k);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < k; ++o) y.data()[b * k + o] += bias.data()[o];

  if (tape && detail::any_requires_grad<Real>({&x, &weight, &bias})) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ws = weight.storage(), bs = bias.storage(),
         ys = y.storage();
    tape->record("linear", {xs, ws, bs}, ys, [=]() {
      Eigen::Map<const Mat> dym(ys->grad.data(), n, k);
      if (xs->requires_grad) {
        Eigen::Map<const Mat> w(ws->data.data(), k, f);
        Eigen::Map<Mat> dx(xs->grad.data(), n, f);
        dx.noalias() += dym * w;
      }
      if (ws->requires_grad) {
        Eigen::Map<const Mat> xv(xs->data.data(), n, f);
        Eigen::Map<Mat> dw(ws->grad.data(), k, f);
        dw.noalias() += dym.transpose() * xv;
      }
      if (bs->requires_grad)
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < k; ++o)
            bs->grad[o] += ys->grad[b * k + o];
    });
  }
  return y;
}

/// Elementwise sum of two tensors of identical shape.
template <class Real>
Tensor<Real> add(Tape<Real>* tape, const Tensor<Real>& a,
                 const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor<Real> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    y.data()[i] = a.data()[i] + b.data()[i];
  if (tape && detail::any_requires_grad<Real>({&a, &b})) {
    y.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    tape->record("add", {as, bs}, ys, [=]() {
      if (as->requires_grad)
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += ys->grad[i];
      if (bs->requires_grad)
        for (std::size_t i = 0; i < bs->grad.size(); ++i)
          bs->grad[i] += ys->grad[i];
    });
  }
  return y;
}

/// Multiplication by a compile-time constant scalar (drop-path scaling).
template <class Real>
Tensor<Real> scale(Tape<Real>* tape, const Tensor<Real>& x, Real factor) {
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = factor * x.data()[i];
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    tape->record("scale", {xs}, ys, [=]() {
      if (!xs->requires_grad) return;
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        xs->grad[i] += factor * ys->grad[i];
    });
  }
  return y;
}

/// Reduction of all elements to a scalar.
template <class Real>
Tensor<Real> sum(Tape<Real>* tape, const Tensor<Real>& x) {
  double s = 0.0;
  for (Real v : x.data()) s += v;
  Tensor<Real> y = Tensor<Real>::scalar(static_cast<Real>(s));
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    tape->record("sum", {xs}, ys, [=]() {
      if (!xs->requires_grad) return;
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        xs->grad[i] += ys->grad[0];
    });
  }
  return y;
}

/// Parameter-free type-A shortcut body: keeps the top-left sample of each
/// stride x stride window, then zero-pads trailing channels.
template <class Real>
Tensor<Real> subsample_pad(Tape<Real>* tape, const Tensor<Real>& x, int stride,
                           std::size_t out_channels) {
  if (x.rank() != 4)
    throw std::invalid_argument("subsample_pad: expected 4-d input, got " +
                                shape_str(x.shape()));
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2),
                    w = x.extent(3);
  if (out_channels < c)
    throw std::invalid_argument(
        "subsample_pad: out-channels " + std::to_string(out_channels) +
        " is less than input channels " + std::to_string(c));
  const std::size_t oh = (h + stride - 1) / stride,
                    ow = (w + stride - 1) / stride;
  Tensor<Real> y(Shape{n, out_channels, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          y.at4(b, ci, oy, ox) = x.at4(b, ci, oy * stride, ox * stride);
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    const std::size_t co = out_channels;
    tape->record("subsample_pad", {xs}, ys, [=]() {
      if (!xs->requires_grad) return;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
              xs->grad[((b * c + ci) * h + oy * stride) * w + ox * stride] +=
                  ys->grad[((b * co + ci) * oh + oy) * ow + ox];
    });
  }
  return y;
}

}  // namespace ops
}  // namespace rornet
