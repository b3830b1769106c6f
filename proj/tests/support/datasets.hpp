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

#include <random>
#include <string>
#include <utility>

#include "est/example.hpp"

namespace est::testing {

// Two numeric features "x1", "x2"; class 1 iff x1 + x2 > 0, with every
// point at distance >= margin from the separating line. Balanced.
inline std::pair<Features, Labels> separable_data(int64_t n, uint64_t seed, double margin = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> along(-3, 3);
  std::uniform_real_distribution<double> across(margin, margin + 2);
  Features f;
  Tensor y(Shape{n});
  const double s = std::sqrt(0.5);
  for (int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = along(rng);
    const double d = (label ? 1 : -1) * across(rng);
    Example e;
    e.features["x1"] = s * (t + d);
    e.features["x2"] = s * (-t + d);
    f.examples.push_back(std::move(e));
    y[static_cast<size_t>(i)] = label;
  }
  return {f, Labels{{"label", y}}};
}

// The four XOR points as numeric features "x1", "x2".
inline std::pair<Features, Labels> xor_data() {
  Features f;
  Tensor y(Shape{4});
  const double pts[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (int i = 0; i < 4; ++i) {
    Example e;
    e.features["x1"] = pts[i][0];
    e.features["x2"] = pts[i][1];
    f.examples.push_back(std::move(e));
    y[static_cast<size_t>(i)] = (pts[i][0] != pts[i][1]) ? 1 : 0;
  }
  return {f, Labels{{"label", y}}};
}

// Categorical features "a" and "b" over `vocab` values each; the label is
// the XOR of their parities, so neither feature alone carries signal.
inline std::pair<Features, Labels> categorical_xor_data(int64_t n, uint64_t seed,
                                                        int vocab = 10) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  Features f;
  Tensor y(Shape{n});
  for (int64_t i = 0; i < n; ++i) {
    const int a = pick(rng);
    const int b = pick(rng);
    Example e;
    e.features["a"] = "a" + std::to_string(a);
    e.features["b"] = "b" + std::to_string(b);
    f.examples.push_back(std::move(e));
    y[static_cast<size_t>(i)] = (a % 2) ^ (b % 2);
  }
  return {f, Labels{{"label", y}}};
}

}  // namespace est::testing
