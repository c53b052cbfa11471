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

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rornet/rng.hpp"

namespace rornet {

/// Per-block survival probabilities under the linear decay rule: block l
/// of L survives with p_l = p0 + (l/L)(pL - p0). The defaults follow the
/// usual p0 = 1, pL = 0.5 setting.
struct DropSchedule {
  int block_count = 0;
  double p0 = 1.0;
  double pL = 0.5;

  void validate() const {
    if (block_count < 1)
      throw std::invalid_argument("drop schedule: block count must be >= 1");
    if (p0 < 0.0 || p0 > 1.0 || pL < 0.0 || pL > 1.0)
      throw std::invalid_argument(
          "drop schedule: probabilities must lie in [0, 1]");
    if (pL > p0)
      throw std::invalid_argument(
          "drop schedule: pL must not exceed p0 (survival is nonincreasing)");
  }

  /// Survival probability of block l, 1-based.
  double survival(int block) const {
    if (block < 1 || block > block_count)
      throw std::invalid_argument("drop schedule: block index out of range");
    return p0 + (static_cast<double>(block) / block_count) * (pL - p0);
  }
};

/// One Bernoulli draw per block; entry l-1 is true when block l keeps its
/// residual branch this mini-batch.
inline std::vector<std::uint8_t> sample_drop_mask(const DropSchedule& sched,
                                                  Rng& rng) {
  sched.validate();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(sched.block_count));
  for (int l = 1; l <= sched.block_count; ++l)
    mask[static_cast<std::size_t>(l - 1)] =
        rng.bernoulli(sched.survival(l)) ? 1 : 0;
  return mask;
}

}  // namespace rornet
