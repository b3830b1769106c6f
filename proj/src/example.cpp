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

#include "est/example.hpp"

namespace est {

std::vector<double> FeatureValue::as_doubles() const {
  if (is_dense()) return dense();
  if (is_integral()) {
    return {integral().begin(), integral().end()};
  }
  throw ExecutionError("categorical feature used where a numeric one is required");
}

std::vector<std::string> FeatureValue::as_strings() const {
  if (is_categorical()) return categorical();
  if (is_integral()) {
    std::vector<std::string> out;
    out.reserve(integral().size());
    for (int64_t v : integral()) out.push_back(std::to_string(v));
    return out;
  }
  throw ExecutionError("dense feature used where a categorical one is required");
}

int64_t Features::batch_size() const {
  int64_t n = -1;
  if (!examples.empty()) n = static_cast<int64_t>(examples.size());
  for (const auto& [name, t] : tensors) {
    const int64_t b = t.batch();
    if (n >= 0 && b != n) {
      throw ExecutionError("feature '" + name + "' has batch size " +
                           std::to_string(b) + ", expected " +
                           std::to_string(n));
    }
    n = b;
  }
  return n < 0 ? 0 : n;
}

}  // namespace est
