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
#include <optional>
#include <string>

#include "est/graph.hpp"
#include "est/ops.hpp"

namespace est {

// Activation applied to a layer's pre-activation.
using Activation = std::function<Node(Node)>;

// "relu", "sigmoid", "tanh", "linear"/"" (identity).
Activation activation_by_name(const std::string& name);

namespace layers {

struct DenseOptions {
  Initializer kernel_initializer;  // default glorot-uniform
  Initializer bias_initializer;    // default zeros
  bool use_bias = true;
};

// Fully connected layer: activation(input . kernel + bias). Variables are
// "<name>/kernel" and "<name>/bias" under the current scope; an empty name
// picks a unique "dense", "dense_1", ...
Node dense(Node input, int64_t units, Activation activation = {},
           const std::string& name = {}, const DenseOptions& options = {});

// Stride-1 valid convolution over NHWC input with a square kernel.
Node conv2d(Node input, int64_t filters, int64_t kernel_size,
            Activation activation = {}, const std::string& name = {});

Node max_pooling2d(Node input, int64_t pool_size, int64_t strides);

// [batch, d1, d2, ...] -> [batch, d1*d2*...]
Node flatten(Node input);

// Identity unless `training`.
Node dropout(Node input, double rate, bool training);

}  // namespace layers

enum class LossKind {
  kL1,                   // sum_j |p - y|
  kL2,                   // 0.5 * sum_j (p - y)^2
  kMeanSquaredError,     // mean_j (p - y)^2
  kSoftmaxCrossEntropy,  // integer class labels, logits [batch, classes]
  kSigmoidCrossEntropy,  // labels in [0, 1], logits same shape
};

LossKind loss_kind_from_name(const std::string& name);

namespace losses {

// Loss of each example, shape [batch].
Node per_example(LossKind kind, Node predictions, Node labels);

// Weighted mean over the batch: sum_i w_i * l_i / sum_i w_i, and 0 when all
// weights are 0. `weights` is [batch] (or [batch, 1]); default 1.
Node compute(LossKind kind, Node predictions, Node labels,
             std::optional<Node> weights = std::nullopt);

// Weighted mean of an already computed per-example loss vector.
Node weighted_mean(Node per_example_loss, std::optional<Node> weights);

}  // namespace losses

// Streaming metric: `update` folds one minibatch into accumulator variables;
// `value` reads only the accumulators.
struct MetricPair {
  Node update;
  Node value;
};

namespace metrics {

// Weighted mean of every element of `values`. Weights may be per element
// or per leading-dim row.
MetricPair mean(Node values, std::optional<Node> weights = std::nullopt,
                const std::string& name = "mean");

// Fraction of examples whose predicted class matches the label. Predictions
// are either class scores [batch, classes] (argmax taken, ties to the lowest
// index) or class ids [batch].
MetricPair accuracy(Node labels, Node predictions,
                    std::optional<Node> weights = std::nullopt,
                    const std::string& name = "accuracy");

// Weighted mean over examples of mean_j (p - y)^2.
MetricPair mean_squared_error(Node labels, Node predictions,
                              std::optional<Node> weights = std::nullopt,
                              const std::string& name = "mse");

// Weighted mean of a per-example loss vector.
MetricPair average_loss(Node per_example_loss,
                        std::optional<Node> weights = std::nullopt,
                        const std::string& name = "average_loss");

// Dispatch by kind name: "mean", "accuracy", "mse", "average_loss". For
// "mean" and "average_loss" the values come from `predictions`.
MetricPair metric(const std::string& kind, Node labels, Node predictions,
                  std::optional<Node> weights = std::nullopt);

}  // namespace metrics
}  // namespace est
