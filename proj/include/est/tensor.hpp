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

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace est {

// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised while a graph is being built (bad shapes, bad arguments).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Raised while a graph is being executed (bad feeds, index out of range).
class ExecutionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: feature specs, job configs, estimator arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when the training loss becomes NaN or infinite.
class NanLossError : public ExecutionError {
 public:
  explicit NanLossError(int64_t step)
      : ExecutionError("loss is NaN or infinite at global_step " +
                       std::to_string(step)),
        step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

// Dimension sizes. In static (graph) shapes a dimension may be kUnknown,
// which is how the variable batch dimension is represented.
class Shape {
 public:
  static constexpr int64_t kUnknown = -1;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {}

  size_t rank() const { return dims_.size(); }
  bool is_scalar() const { return dims_.empty(); }
  int64_t operator[](size_t i) const { return dims_.at(i); }
  int64_t& operator[](size_t i) { return dims_.at(i); }
  const std::vector<int64_t>& dims() const { return dims_; }

  // Last dimension; for rank 0 this is 1.
  int64_t last() const { return dims_.empty() ? 1 : dims_.back(); }

  bool fully_defined() const;
  // Product of dims. Only meaningful for fully defined shapes.
  int64_t num_elements() const;
  // Two static shapes are compatible when ranks match and every pair of
  // known dims agrees.
  bool compatible_with(const Shape& other) const;

  std::string to_string() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<int64_t> dims_;
};

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor filled(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.rank(); }
  size_t size() const { return values_.size(); }
  // Leading dimension, 1 for scalars.
  int64_t batch() const { return shape_.rank() == 0 ? 1 : shape_[0]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& raw() { return values_; }
  const std::vector<double>& raw() const { return values_; }

  double& operator[](size_t i) { return values_[i]; }
  const double& operator[](size_t i) const { return values_[i]; }
  double& at(size_t r, size_t c);
  double at(size_t r, size_t c) const;

  // Scalar value; throws unless the tensor has exactly one element.
  double item() const;
  // Element i interpreted as a non-negative integer index.
  int64_t index_at(size_t i) const;

  // Same values, new shape. -1 in `dims` is inferred.
  Tensor reshaped(Shape dims) const;
  // Row `r` of the leading dimension, as a tensor of the trailing dims.
  Tensor row(int64_t r) const;

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Stacks tensors of identical shape along a new leading dimension.
Tensor stack_rows(std::span<const Tensor> rows);

}  // namespace est
