// SPDX-License-Identifier: Apache-2.0
#include "fdd/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

namespace fdd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  // v - v is +0 for finite v and NaN otherwise; the OR-reduction vectorizes.
  std::uint64_t bits = 0;
  for (double v : data_) bits |= std::bit_cast<std::uint64_t>(v - v);
  return bits == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace fdd
