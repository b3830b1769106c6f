// Copyright 2026 The Estimator Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "est/tensor.hpp"

#include <cmath>
#include <sstream>

namespace est {

bool Shape::fully_defined() const {
  for (int64_t d : dims_) {
    if (d < 0) return false;
  }
  return true;
}

int64_t Shape::num_elements() const {
  int64_t n = 1;
  for (int64_t d : dims_) n *= d;
  return n;
}

bool Shape::compatible_with(const Shape& other) const {
  if (rank() != other.rank()) return false;
  for (size_t i = 0; i < rank(); ++i) {
    if (dims_[i] >= 0 && other.dims_[i] >= 0 && dims_[i] != other.dims_[i]) {
      return false;
    }
  }
  return true;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ",";
    if (dims_[i] < 0) {
      os << "?";
    } else {
      os << dims_[i];
    }
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  if (!shape_.fully_defined()) {
    throw Error("tensor shape must be fully defined: " + shape_.to_string());
  }
  values_.assign(static_cast<size_t>(shape_.num_elements()), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (!shape_.fully_defined()) {
    throw Error("tensor shape must be fully defined: " + shape_.to_string());
  }
  if (static_cast<int64_t>(values_.size()) != shape_.num_elements()) {
    throw Error("tensor of shape " + shape_.to_string() + " needs " +
                std::to_string(shape_.num_elements()) + " values, got " +
                std::to_string(values_.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = static_cast<int64_t>(values.size());
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> v;
  int64_t cols = -1;
  for (const auto& r : rows) {
    if (cols >= 0 && static_cast<int64_t>(r.size()) != cols) {
      throw Error("ragged matrix literal");
    }
    cols = static_cast<int64_t>(r.size());
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{static_cast<int64_t>(rows.size()), cols < 0 ? 0 : cols},
                std::move(v));
}

Tensor Tensor::filled(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.values_.begin(), t.values_.end(), v);
  return t;
}

double& Tensor::at(size_t r, size_t c) {
  return values_.at(r * static_cast<size_t>(shape_.last()) + c);
}

double Tensor::at(size_t r, size_t c) const {
  return values_.at(r * static_cast<size_t>(shape_.last()) + c);
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw Error("item() on tensor of shape " + shape_.to_string());
  }
  return values_[0];
}

int64_t Tensor::index_at(size_t i) const {
  const double v = values_.at(i);
  if (!(v >= 0) || v != std::floor(v)) {
    throw ExecutionError("value " + std::to_string(v) +
                         " is not a valid non-negative integer index");
  }
  return static_cast<int64_t>(v);
}

Tensor Tensor::reshaped(Shape dims) const {
  std::vector<int64_t> d = dims.dims();
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i] < 0) {
      if (infer >= 0) throw Error("reshape: more than one inferred dim");
      infer = static_cast<int>(i);
    } else {
      known *= d[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || static_cast<int64_t>(values_.size()) % known != 0) {
      throw Error("reshape: cannot infer dim of " + dims.to_string() +
                  " from " + shape_.to_string());
    }
    d[infer] = static_cast<int64_t>(values_.size()) / known;
  }
  return Tensor(Shape(std::move(d)), values_);
}

Tensor Tensor::row(int64_t r) const {
  if (shape_.rank() == 0) throw Error("row() on scalar");
  std::vector<int64_t> tail(shape_.dims().begin() + 1, shape_.dims().end());
  Shape s(tail);
  const auto n = static_cast<size_t>(s.num_elements());
  std::vector<double> v(values_.begin() + static_cast<ptrdiff_t>(r * n),
                        values_.begin() + static_cast<ptrdiff_t>((r + 1) * n));
  return Tensor(std::move(s), std::move(v));
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw Error("stack_rows: no rows");
  std::vector<int64_t> dims{static_cast<int64_t>(rows.size())};
  const auto& first = rows.front().shape().dims();
  dims.insert(dims.end(), first.begin(), first.end());
  std::vector<double> v;
  v.reserve(rows.size() * rows.front().size());
  for (const auto& r : rows) {
    if (r.shape() != rows.front().shape()) {
      throw Error("stack_rows: shape mismatch " + r.shape().to_string() +
                  " vs " + rows.front().shape().to_string());
    }
    v.insert(v.end(), r.raw().begin(), r.raw().end());
  }
  return Tensor(Shape(std::move(dims)), std::move(v));
}

}  // namespace est
