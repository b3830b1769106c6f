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
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "est/tensor.hpp"

namespace est {

// One raw feature of one example: a dense float vector, a (possibly empty,
// possibly multi-valued) list of category strings, or a list of integers.
class FeatureValue {
 public:
  using Dense = std::vector<double>;
  using Categorical = std::vector<std::string>;
  using Integral = std::vector<int64_t>;

  FeatureValue() : value_(Categorical{}) {}
  FeatureValue(Dense v) : value_(std::move(v)) {}              // NOLINT
  FeatureValue(Categorical v) : value_(std::move(v)) {}        // NOLINT
  FeatureValue(Integral v) : value_(std::move(v)) {}           // NOLINT
  FeatureValue(double v) : value_(Dense{v}) {}                 // NOLINT
  FeatureValue(std::string v) : value_(Categorical{std::move(v)}) {}  // NOLINT
  FeatureValue(const char* v) : value_(Categorical{v}) {}      // NOLINT

  bool is_dense() const { return std::holds_alternative<Dense>(value_); }
  bool is_categorical() const {
    return std::holds_alternative<Categorical>(value_);
  }
  bool is_integral() const { return std::holds_alternative<Integral>(value_); }

  const Dense& dense() const { return std::get<Dense>(value_); }
  const Categorical& categorical() const {
    return std::get<Categorical>(value_);
  }
  const Integral& integral() const { return std::get<Integral>(value_); }

  // Values as doubles (dense or integral). Throws for categorical.
  std::vector<double> as_doubles() const;
  // Values as category strings; integers are rendered in decimal.
  std::vector<std::string> as_strings() const;

  bool operator==(const FeatureValue&) const = default;

 private:
  std::variant<Dense, Categorical, Integral> value_;
};

struct Example {
  std::map<std::string, FeatureValue> features;
};

// The feature half of one minibatch. Raw per-example features feed the
// feature columns; named tensors (leading batch dim) feed custom models.
struct Features {
  std::vector<Example> examples;
  std::map<std::string, Tensor> tensors;

  // Batch size; examples and tensors must agree when both are present.
  int64_t batch_size() const;
};

using Labels = std::map<std::string, Tensor>;

struct Batch {
  Features features;
  Labels labels;
};

}  // namespace est
