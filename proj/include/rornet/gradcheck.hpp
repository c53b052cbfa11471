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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rornet/ops.hpp"
#include "rornet/rng.hpp"
#include "rornet/tape.hpp"
#include "rornet/tensor.hpp"

namespace rornet {

struct GradCheckOptions {
  double tolerance = 1e-3;
  /// Central-difference step is h_scale * max(1, |x_i|).
  double h_scale = 1e-3;
  /// Coordinates checked per tensor; 0 means all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0x5eed;
  /// Coordinates where both gradients are below this magnitude carry no
  /// resolvable signal and are skipped.
  double value_floor = 1e-4;
};

struct GradCheckCoord {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  GradCheckCoord worst;
  std::size_t checked = 0;
  std::size_t skipped_kink = 0;
  std::size_t skipped_small = 0;
  std::vector<GradCheckCoord> nonfinite;  // flagged coordinates
};

/// Compares analytic gradients against central finite differences.
///
/// `builder` must be callable as `Tensor<R> builder(Tape<R>&, const
/// std::vector<Tensor<R>>&)` for R = Real and R = double, return a scalar,
/// and be a pure function of its inputs (construct fresh batch-norm
/// statistics inside rather than sharing mutable state across calls).
///
/// The difference quotient is always evaluated through the double
/// instantiation: single-precision forward arithmetic cannot resolve a
/// 1e-3 relative comparison on small gradients, so the float analytic
/// gradient is checked against an accurate numeric reference instead.
/// Coordinates whose +/-h evaluations land on different sides of a ReLU
/// kink are excluded (detected via the tape's activation-pattern hash).
template <class Real, class Builder>
GradCheckReport finite_diff_check(Builder&& builder,
                                  const std::vector<Tensor<Real>>& inputs,
                                  const GradCheckOptions& opt = {}) {
  // Analytic pass in the caller's precision.
  std::vector<Tensor<Real>> xs;
  xs.reserve(inputs.size());
  for (const auto& t : inputs) {
    xs.push_back(t.clone());
    xs.back().set_requires_grad(true);
  }
  Tape<Real> tape;
  Tensor<Real> out = builder(tape, xs);
  if (out.size() != 1)
    throw std::invalid_argument("finite_diff_check: builder output " +
                                shape_str(out.shape()) + " is not a scalar");
  tape.backward(out);

  // Double copies for the numeric reference.
  std::vector<Tensor<double>> xd;
  xd.reserve(inputs.size());
  for (const auto& t : inputs) {
    std::vector<double> d(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      d[i] = static_cast<double>(t.data()[i]);
    xd.push_back(Tensor<double>::from_data(t.shape(), std::move(d)));
  }

  auto eval = [&](std::uint64_t* pattern) {
    Tape<double> tp;
    Tensor<double> o = builder(tp, xd);
    if (pattern) *pattern = tp.pattern_hash();
    return o.item();
  };

  GradCheckReport rep;
  Rng sampler(opt.sample_seed);
  for (std::size_t ti = 0; ti < xs.size(); ++ti) {
    const std::size_t total = xs[ti].size();
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_tensor == 0 || total <= opt.max_coords_per_tensor) {
      coords.resize(total);
      for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i)
        coords.push_back(static_cast<std::size_t>(
            sampler.uniform_int(0, static_cast<std::int64_t>(total) - 1)));
    }

    for (std::size_t idx : coords) {
      const double x0 = xd[ti].data()[idx];
      const double h = opt.h_scale * std::max(1.0, std::abs(x0));
      std::uint64_t pat_hi = 0, pat_lo = 0;
      xd[ti].data()[idx] = x0 + h;
      const double f_hi = eval(&pat_hi);
      xd[ti].data()[idx] = x0 - h;
      const double f_lo = eval(&pat_lo);
      xd[ti].data()[idx] = x0;

      const double fd = (f_hi - f_lo) / (2.0 * h);
      const double analytic = static_cast<double>(xs[ti].grad()[idx]);
      if (!std::isfinite(fd) || !std::isfinite(analytic)) {
        rep.nonfinite.push_back({ti, idx, analytic, fd, 0.0});
        continue;
      }
      if (pat_hi != pat_lo) {
        ++rep.skipped_kink;
        continue;
      }
      const double mag = std::max(std::abs(analytic), std::abs(fd));
      if (mag < opt.value_floor) {
        ++rep.skipped_small;
        continue;
      }
      const double rel = std::abs(analytic - fd) / mag;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = {ti, idx, analytic, fd, rel};
      }
    }
  }
  rep.pass = rep.nonfinite.empty() && rep.max_rel_err < opt.tolerance;
  return rep;
}

}  // namespace rornet
