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

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rornet/tensor.hpp"

namespace rornet {

/// Records the operations of one forward pass in execution order.
/// Recording order is topological by construction (an op's operands exist
/// before the op runs), so backward is a single reverse sweep that visits
/// each node exactly once. A tape is single-threaded; independent tapes
/// may run concurrently.
template <class Real>
class Tape {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<Real>>;

  void record(const char* op, std::vector<StoragePtr> inputs,
              StoragePtr output, std::function<void()> backward) {
    nodes_.push_back(
        {op, std::move(inputs), std::move(output), std::move(backward)});
  }

  /// Accumulates d(out)/d(t) into the grad of every requires_grad tensor
  /// recorded on this tape. Grads are zeroed first, so after the call each
  /// tensor holds its total derivative. Accumulation order is the fixed
  /// reverse of recording order.
  void backward(const Tensor<Real>& out) {
    if (out.size() != 1)
      throw std::invalid_argument("backward: output " +
                                  shape_str(out.shape()) + " is not a scalar");
    bool on_tape = false;
    for (const auto& n : nodes_)
      if (n.out == out.storage()) on_tape = true;
    if (!on_tape)
      throw std::invalid_argument(
          "backward: output was not produced on this tape");

    for (auto& n : nodes_) {
      for (auto& in : n.inputs)
        if (in->requires_grad) in->ensure_grad(), zero(*in);
      if (n.out->requires_grad) n.out->ensure_grad(), zero(*n.out);
    }
    out.storage()->ensure_grad();
    out.storage()->grad[0] = Real(1);

    visits_.assign(nodes_.size(), 0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      ++visits_[i];
      if (nodes_[i].backward) nodes_[i].backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Per-node visit counts from the most recent backward sweep.
  const std::vector<std::size_t>& last_visit_counts() const { return visits_; }

  /// Folds a ReLU sign pattern into the running hash. Two forward passes
  /// whose hashes differ crossed at least one activation kink; gradient
  /// checking uses this to exclude straddling coordinates.
  void note_pattern(std::uint64_t h) {
    pattern_hash_ ^= h + 0x9e3779b97f4a7c15ull + (pattern_hash_ << 6) +
                     (pattern_hash_ >> 2);
  }
  std::uint64_t pattern_hash() const { return pattern_hash_; }

 private:
  struct Node {
    const char* op;
    std::vector<StoragePtr> inputs;
    StoragePtr out;
    std::function<void()> backward;
  };

  static void zero(TensorStorage<Real>& s) {
    std::fill(s.grad.begin(), s.grad.end(), Real(0));
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visits_;
  std::uint64_t pattern_hash_ = 0;
};

}  // namespace rornet
