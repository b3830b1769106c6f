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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "est/model_fn.hpp"

namespace est {

// What the head receives: final logits of the right width, or the last
// hidden activation (the head then adds its own "<head_name>/logits" layer).
struct HeadInput {
  enum class Kind { kLogits, kLastLayer };
  Kind kind;
  Node node;

  static HeadInput logits(Node n) { return {Kind::kLogits, n}; }
  static HeadInput last_layer(Node n) { return {Kind::kLastLayer, n}; }
};

using TrainOpFn = std::function<Node(Node loss)>;

class Head;
using HeadPtr = std::shared_ptr<const Head>;

// Output stage of a model: loss, metrics and predictions from logits.
class Head {
 public:
  // Loss, metrics and predictions of one head, before mode filtering.
  struct Outputs {
    std::map<std::string, Node> predictions;
    std::optional<Node> loss;
    std::map<std::string, MetricPair> metrics;
  };

  virtual ~Head() = default;

  const std::string& name() const { return head_name_; }
  const std::string& label_name() const { return label_name_; }
  virtual int64_t logits_dimension() const = 0;
  virtual nlohmann::json to_json() const = 0;

  // Builds predictions, plus the loss outside PREDICT and metrics in EVAL.
  virtual Outputs build(const FeatureInputs& features, Mode mode, const HeadInput& input,
                        const LabelInputs& labels) const = 0;

  // Logits node for `input`: passthrough (width checked) or a new dense
  // layer scoped under the head name.
  Node logits_for(const HeadInput& input) const;

 protected:
  Head(std::string label_name, std::string head_name, std::string weight_column);

  std::optional<Node> weights(const FeatureInputs& features) const;

  std::string label_name_;
  std::string head_name_;
  std::string weight_column_;
};

// Predictions {logits, probabilities, class_id}; softmax cross-entropy
// loss; metrics {accuracy, average_loss}. Labels are class ids [batch].
HeadPtr multi_class_head(int64_t n_classes, const std::string& label_name = "label",
                         const std::string& head_name = "head",
                         const std::string& weight_column = "");

// One logit; probabilities [1 - p, p] with p = sigmoid(logit); sigmoid
// cross-entropy; metrics {accuracy, average_loss}. Labels are 0/1.
HeadPtr binary_classification_head(const std::string& label_name = "label",
                                   const std::string& head_name = "head",
                                   const std::string& weight_column = "");

// Predictions {value}; mean squared error loss; metrics {average_loss}.
// Labels are [batch, label_dim] (or [batch] when label_dim is 1).
HeadPtr regression_head(int64_t label_dim = 1, const std::string& label_name = "label",
                        const std::string& head_name = "head",
                        const std::string& weight_column = "");

// Total loss sum_i w_i * loss_i; child predictions and metrics are keyed
// "<head_name>/<name>". Logits input is split across children in order.
HeadPtr multi_head(std::vector<HeadPtr> heads, std::vector<double> loss_weights = {});

HeadPtr head_from_json(const nlohmann::json& j);

// Wires the head into a full EstimatorSpec for `mode`. TRAIN needs
// `train_op_fn`; TRAIN and EVAL need labels.
EstimatorSpec create_estimator_spec(const Head& head, const FeatureInputs& features, Mode mode,
                                    const HeadInput& input, const LabelInputs& labels,
                                    const TrainOpFn& train_op_fn = {});

}  // namespace est
