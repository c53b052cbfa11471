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
#include <cstring>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rornet/rng.hpp"

namespace rornet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return s.empty() ? "scalar" : out;
}

/// Dense n-d array plus optional gradient of the same extent.
/// Data is row-major in logical order; activations are NCHW, conv kernels
/// are (out-channels, in-channels, kH, kW).
template <class Real>
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

/// Cheap handle onto shared storage. Ops produce new tensors; existing
/// values are never mutated except by the optimizer and batch-norm
/// running-statistic updates, which own their tensors exclusively.
template <class Real>
class Tensor {
 public:
  using Storage = TensorStorage<Real>;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false)
      : st_(std::make_shared<Storage>()) {
    st_->shape = std::move(shape);
    st_->data.assign(numel(st_->shape), fill);
    st_->requires_grad = requires_grad;
  }

  static Tensor from_data(Shape shape, std::vector<Real> data,
                          bool requires_grad = false) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                  " does not cover " +
                                  std::to_string(data.size()) + " values");
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(data);
    t.st_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  std::size_t size() const { return st_->data.size(); }
  std::size_t rank() const { return st_->shape.size(); }
  std::size_t extent(std::size_t d) const { return st_->shape[d]; }

  std::vector<Real>& data() { return st_->data; }
  const std::vector<Real>& data() const { return st_->data; }
  std::vector<Real>& grad() { return st_->grad; }
  const std::vector<Real>& grad() const { return st_->grad; }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool b) { st_->requires_grad = b; }

  Real item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor " + shape_str(shape()) +
                                  " is not a scalar");
    return st_->data[0];
  }

  /// 4-d offset helper for NCHW / OIHW indexing.
  std::size_t offset4(std::size_t a, std::size_t b, std::size_t c,
                      std::size_t d) const {
    const Shape& s = st_->shape;
    return ((a * s[1] + b) * s[2] + c) * s[3] + d;
  }

  Real& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return st_->data[offset4(a, b, c, d)];
  }
  Real at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return st_->data[offset4(a, b, c, d)];
  }

  /// Deep copy; the clone shares nothing with the source.
  Tensor clone() const {
    Tensor t;
    t.st_ = std::make_shared<Storage>(*st_);
    return t;
  }

  std::shared_ptr<Storage> storage() const { return st_; }

  std::uint64_t data_hash() const {
    return fnv1a(st_->data.data(), st_->data.size() * sizeof(Real));
  }

 private:
  std::shared_ptr<Storage> st_;
};

// ---------------------------------------------------------------------
// Serialization: shape header (u64 rank, u64 extents) followed by the
// payload as little-endian 32-bit floats. This is the checkpoint wire
// format for both precisions; double tensors are narrowed on write.
// ---------------------------------------------------------------------

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("tensor read: truncated shape header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f32_le(std::ostream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float get_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("tensor read: truncated payload");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

template <class Real>
void write_tensor(std::ostream& out, const Tensor<Real>& t) {
  detail::put_u64_le(out, t.rank());
  for (std::size_t d = 0; d < t.rank(); ++d)
    detail::put_u64_le(out, t.extent(d));
  for (Real v : t.data()) detail::put_f32_le(out, static_cast<float>(v));
}

template <class Real>
Tensor<Real> read_tensor(std::istream& in) {
  const std::uint64_t rank = detail::get_u64_le(in);
  if (rank > 8) throw std::runtime_error("tensor read: implausible rank");
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_u64_le(in);
  std::vector<Real> data(numel(shape));
  for (auto& v : data) v = static_cast<Real>(detail::get_f32_le(in));
  return Tensor<Real>::from_data(std::move(shape), std::move(data));
}

template <class Real>
Tensor<Real> random_normal(Shape shape, Rng& rng, double mean = 0.0,
                           double stddev = 1.0, bool requires_grad = false) {
  Tensor<Real> t(std::move(shape), Real(0), requires_grad);
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal(mean, stddev));
  return t;
}

template <class Real>
Tensor<Real> random_uniform(Shape shape, Rng& rng, double lo, double hi,
                            bool requires_grad = false) {
  Tensor<Real> t(std::move(shape), Real(0), requires_grad);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

}  // namespace rornet
