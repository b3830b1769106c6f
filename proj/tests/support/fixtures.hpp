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

#include <stdlib.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "est/estimator.hpp"
#include "est/heads.hpp"
#include "est/ops.hpp"
#include "est/optimizer.hpp"

namespace est::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "est-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

// Features "x" [n, dim] and labels "label" [n] for a 3-class problem whose
// class is the index of the largest coordinate among the first three.
inline std::pair<Features, Labels> blob_data(int64_t n, int64_t dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor x(Shape{n, dim});
  Tensor y(Shape{n});
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int64_t j = 0; j < dim; ++j) {
      x[static_cast<size_t>(i * dim + j)] = nd(rng);
      if (j < 3 && x[static_cast<size_t>(i * dim + j)] > x[static_cast<size_t>(i * dim + best)]) {
        best = static_cast<int>(j);
      }
    }
    y[static_cast<size_t>(i)] = best;
  }
  Features f;
  f.tensors["x"] = x;
  return {f, Labels{{"label", y}}};
}

// One hidden layer + multi_class(3) head over feature "x" of width 4.
// Counts invocations per mode when `calls` is given.
struct CallCounts {
  std::atomic<int> train{0}, eval{0}, predict{0};
};

inline ModelFn mlp_model_fn(CallCounts* calls = nullptr, HeadPtr head = multi_class_head(3)) {
  return [calls, head](const FeatureInputs& features, const LabelInputs& labels, Mode mode,
                       const nlohmann::json& params) {
    if (calls) {
      (mode == Mode::kTrain ? calls->train : mode == Mode::kEval ? calls->eval : calls->predict)++;
    }
    const int64_t hidden = params.value("hidden", int64_t{8});
    const double lr = params.value("learning_rate", 0.1);
    Node x = features.numeric("x", 4);
    Node h = layers::dense(x, hidden, activation_by_name("tanh"));
    return create_estimator_spec(*head, features, mode, HeadInput::last_layer(h), labels,
                                 [lr](Node loss) {
                                   return minimize(loss, make_optimizer("sgd", lr));
                                 });
  };
}

inline std::vector<double> flat_values(Graph& g) {
  std::vector<double> out;
  for (const Variable& v : g.variables()) {
    for (double d : v.value().values()) out.push_back(d);
  }
  return out;
}

}  // namespace est::testing
