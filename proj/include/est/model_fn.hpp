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

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "est/graph.hpp"
#include "est/layers.hpp"
#include "json.hpp"

namespace est {

// Feature side of a model_fn: builds nodes that read the fed Features.
class FeatureInputs {
 public:
  explicit FeatureInputs(Graph& g) : graph_(&g) {}

  Graph& graph() const { return *graph_; }
  // Dense feature with per-example shape `dims`: [batch, dims...].
  Node dense(const std::string& name, std::vector<int64_t> dims) const;
  // [batch, dim]
  Node numeric(const std::string& name, int64_t dim = 1) const { return dense(name, {dim}); }

 private:
  Graph* graph_;
};

// Label side of a model_fn. Absent in PREDICT mode.
class LabelInputs {
 public:
  LabelInputs(Graph& g, bool present) : graph_(&g), present_(present) {}

  bool present() const { return present_; }
  // Label tensor with per-example shape `dims`: [batch, dims...]. Throws
  // when labels are absent.
  Node get(const std::string& name, std::vector<int64_t> dims = {}) const;

 private:
  Graph* graph_;
  bool present_;
};

// What a model_fn returns. Fields by mode:
//   TRAIN:   predictions, loss, train_op
//   EVAL:    predictions, loss, eval_metrics
//   PREDICT: predictions, export_outputs
struct EstimatorSpec {
  Mode mode = Mode::kPredict;
  std::map<std::string, Node> predictions;
  std::optional<Node> loss;
  std::optional<Node> train_op;
  std::map<std::string, MetricPair> eval_metrics;
  // Prediction name -> per-example shape, the serving signature.
  std::map<std::string, Shape> export_outputs;

  // Checks that the fields required by `mode` are present, the loss is a
  // scalar, and no field of another mode is set.
  void validate() const;
};

using ModelFn = std::function<EstimatorSpec(const FeatureInputs& features,
                                            const LabelInputs& labels, Mode mode,
                                            const nlohmann::json& params)>;

// Per-example signature derived from prediction node shapes.
std::map<std::string, Shape> signature_of(const std::map<std::string, Node>& predictions);

}  // namespace est
