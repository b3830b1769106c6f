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

#include "est/layers.hpp"

#include <numeric>

namespace est {
namespace {

Graph& graph_of(Node n) {
  if (!n.valid()) throw GraphError("invalid node");
  return *n.graph();
}

// Accumulates sum(w * v) and sum(w) into two scalar variables.
class MetricUpdateOp final : public Op {
 public:
  MetricUpdateOp(int total, int count, bool weighted)
      : total_(total), count_(count), weighted_(weighted) {}
  std::string_view type() const override { return "metric_update"; }
  bool stateful() const override { return true; }
  Shape infer_shape(std::span<const Shape>) const override { return Shape{}; }
  Tensor forward(std::span<const Tensor* const> in,
                 ExecContext& ctx) const override {
    const Tensor& values = *in[0];
    double total = 0;
    double count = 0;
    if (!weighted_) {
      for (double v : values.values()) total += v;
      count = static_cast<double>(values.size());
    } else {
      const Tensor& w = *in[1];
      if (w.size() == 0 || values.size() % w.size() != 0) {
        throw ExecutionError("metric weights of shape " + w.shape().to_string() +
                             " do not match values of shape " +
                             values.shape().to_string());
      }
      const size_t per = values.size() / w.size();
      for (size_t i = 0; i < values.size(); ++i) total += w[i / per] * values[i];
      for (double x : w.values()) count += x * static_cast<double>(per);
    }
    Graph& g = ctx.graph();
    g.variable_def(total_).value[0] += total;
    g.variable_def(count_).value[0] += count;
    return Tensor(Shape{});
  }

 private:
  int total_;
  int count_;
  bool weighted_;
};

class MetricValueOp final : public Op {
 public:
  std::string_view type() const override { return "metric_value"; }
  Shape infer_shape(std::span<const Shape>) const override { return Shape{}; }
  Tensor forward(std::span<const Tensor* const> in, ExecContext&) const override {
    const double count = in[1]->item();
    if (count == 0) throw ExecutionError("no data accumulated");
    return Tensor::scalar(in[0]->item() / count);
  }
  std::vector<std::optional<Tensor>> backward(std::span<const Tensor* const>,
                                              const Tensor&, const Tensor&,
                                              ExecContext&) const override {
    return {std::nullopt, std::nullopt};
  }
};

MetricPair make_metric(Node values, std::optional<Node> weights,
                       const std::string& name) {
  Graph& g = graph_of(values);
  const std::string scope = g.unique_name("metrics/" + name);
  Variable total = g.create_variable(g.scoped_name(scope + "/total"),
                                     Tensor::scalar(0), /*trainable=*/false);
  Variable count = g.create_variable(g.scoped_name(scope + "/count"),
                                     Tensor::scalar(0), /*trainable=*/false);
  std::vector<Node> inputs{values};
  if (weights) inputs.push_back(*weights);
  Node update = g.add(std::make_shared<MetricUpdateOp>(total.index(), count.index(),
                                                       weights.has_value()),
                      inputs);
  Node value = g.add(std::make_shared<MetricValueOp>(), {total.node(), count.node()});
  return MetricPair{update, value};
}

// Flattens [batch] / [batch, 1] weights to [batch].
Node flat_weights(Node w) {
  if (w.shape().rank() == 1) return w;
  return reshape(w, {-1});
}

// Labels reshaped to the predictions' shape when they differ only by
// trailing unit dims ([b] vs [b,1]).
Node conform_labels(Node predictions, Node labels) {
  const Shape& p = predictions.shape();
  const Shape& l = labels.shape();
  if (p.rank() == l.rank()) {
    if (!p.compatible_with(l)) {
      throw GraphError("predictions " + p.to_string() + " and labels " +
                       l.to_string() + " are incompatible");
    }
    return labels;
  }
  std::vector<int64_t> dims{-1};
  for (size_t i = 1; i < p.rank(); ++i) dims.push_back(p[i]);
  return reshape(labels, dims);
}

// Sum (or mean) over every non-batch dim; identity for rank 1.
Node per_row(Node x, bool mean) {
  if (x.shape().rank() <= 1) return x;
  Node flat = x.shape().rank() == 2 ? x : reshape(x, {-1, [&] {
    int64_t n = 1;
    for (size_t i = 1; i < x.shape().rank(); ++i) n *= x.shape()[i];
    return n;
  }()});
  return mean ? reduce_mean(flat, 1) : reduce_sum(flat, 1);
}

}  // namespace

Activation activation_by_name(const std::string& name) {
  if (name.empty() || name == "linear" || name == "none") return {};
  if (name == "relu") return [](Node x) { return relu(x); };
  if (name == "sigmoid") return [](Node x) { return sigmoid(x); };
  if (name == "tanh") return [](Node x) { return tanh(x); };
  throw Error("unknown activation '" + name + "'");
}

namespace layers {

Node dense(Node input, int64_t units, Activation activation,
           const std::string& name, const DenseOptions& options) {
  Graph& g = graph_of(input);
  if (input.shape().rank() != 2) {
    throw GraphError("dense: input must have rank 2, got " +
                     input.shape().to_string());
  }
  if (units < 1) throw GraphError("dense: units must be >= 1");
  const int64_t in = input.shape()[1];
  if (in < 0) throw GraphError("dense: input feature dim must be known");
  VariableScope scope(g, name.empty() ? g.unique_name("dense") : name);
  Variable kernel = g.get_variable("kernel", {in, units}, options.kernel_initializer);
  Node out = matmul(input, kernel.node());
  if (options.use_bias) {
    Variable bias = g.get_variable("bias", {units}, options.bias_initializer);
    out = add(out, bias.node());
  }
  return activation ? activation(out) : out;
}

Node conv2d(Node input, int64_t filters, int64_t kernel_size,
            Activation activation, const std::string& name) {
  Graph& g = graph_of(input);
  if (input.shape().rank() != 4) {
    throw GraphError("conv2d: input must have rank 4 (NHWC), got " +
                     input.shape().to_string());
  }
  const int64_t channels = input.shape()[3];
  if (channels < 0) throw GraphError("conv2d: channel dim must be known");
  VariableScope scope(g, name.empty() ? g.unique_name("conv2d") : name);
  Variable kernel =
      g.get_variable("kernel", {kernel_size, kernel_size, channels, filters});
  Variable bias = g.get_variable("bias", {filters});
  Node out = add(est::conv2d(input, kernel.node()), bias.node());
  return activation ? activation(out) : out;
}

Node max_pooling2d(Node input, int64_t pool_size, int64_t strides) {
  return max_pool2d(input, pool_size, strides);
}

Node flatten(Node input) {
  const Shape& s = input.shape();
  if (s.rank() < 2) {
    throw GraphError("flatten: input must have rank >= 2, got " + s.to_string());
  }
  int64_t n = 1;
  for (size_t i = 1; i < s.rank(); ++i) {
    if (s[i] < 0) throw GraphError("flatten: non-batch dims must be known");
    n *= s[i];
  }
  return reshape(input, {-1, n});
}

Node dropout(Node input, double rate, bool training) {
  return est::dropout(input, rate, training);
}

}  // namespace layers

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "l1") return LossKind::kL1;
  if (name == "l2") return LossKind::kL2;
  if (name == "mean_squared_error" || name == "mse") return LossKind::kMeanSquaredError;
  if (name == "softmax_cross_entropy") return LossKind::kSoftmaxCrossEntropy;
  if (name == "sigmoid_cross_entropy") return LossKind::kSigmoidCrossEntropy;
  throw Error("unknown loss '" + name + "'");
}

namespace losses {

Node per_example(LossKind kind, Node predictions, Node labels) {
  Graph& g = graph_of(predictions);
  switch (kind) {
    case LossKind::kSoftmaxCrossEntropy: {
      const Shape& s = predictions.shape();
      if (s.rank() != 2 || s[1] < 1) {
        throw GraphError("softmax_cross_entropy: logits must be [batch, classes], got " +
                         s.to_string());
      }
      Node ids = labels.shape().rank() == 1 ? labels : reshape(labels, {-1});
      Node target = one_hot(ids, s[1]);
      return neg(reduce_sum(mul(target, log_softmax(predictions)), 1));
    }
    case LossKind::kSigmoidCrossEntropy: {
      Node z = conform_labels(predictions, labels);
      // softplus(x) - x*z, stable for any x.
      return per_row(sub(softplus(predictions), mul(predictions, z)), false);
    }
    case LossKind::kL1:
      return per_row(abs(sub(predictions, conform_labels(predictions, labels))), false);
    case LossKind::kL2: {
      Node half = g.constant(Tensor::scalar(0.5));
      return mul(per_row(square(sub(predictions, conform_labels(predictions, labels))),
                         false),
                 half);
    }
    case LossKind::kMeanSquaredError:
      return per_row(square(sub(predictions, conform_labels(predictions, labels))), true);
  }
  throw GraphError("unknown loss kind");
}

Node weighted_mean(Node per_example_loss, std::optional<Node> weights) {
  if (!weights) return reduce_mean(per_example_loss);
  Node w = flat_weights(*weights);
  if (w.shape().rank() != 1 ||
      !w.shape().compatible_with(Shape{per_example_loss.shape()[0]})) {
    throw GraphError("loss weights of shape " + weights->shape().to_string() +
                     " do not match per-example losses " +
                     per_example_loss.shape().to_string());
  }
  return div_no_nan(reduce_sum(mul(per_example_loss, w)), reduce_sum(w));
}

Node compute(LossKind kind, Node predictions, Node labels,
             std::optional<Node> weights) {
  return weighted_mean(per_example(kind, predictions, labels), weights);
}

}  // namespace losses

namespace metrics {

MetricPair mean(Node values, std::optional<Node> weights, const std::string& name) {
  return make_metric(values, weights, name);
}

MetricPair accuracy(Node labels, Node predictions, std::optional<Node> weights,
                    const std::string& name) {
  Node ids = predictions.shape().rank() >= 2 ? argmax(predictions) : predictions;
  Node l = labels.shape().rank() == 1 ? labels : reshape(labels, {-1});
  return make_metric(equal(ids, l),
                     weights ? std::optional<Node>(flat_weights(*weights)) : std::nullopt,
                     name);
}

MetricPair mean_squared_error(Node labels, Node predictions,
                              std::optional<Node> weights, const std::string& name) {
  Node per = losses::per_example(LossKind::kMeanSquaredError, predictions, labels);
  return make_metric(per,
                     weights ? std::optional<Node>(flat_weights(*weights)) : std::nullopt,
                     name);
}

MetricPair average_loss(Node per_example_loss, std::optional<Node> weights,
                        const std::string& name) {
  return make_metric(per_example_loss,
                     weights ? std::optional<Node>(flat_weights(*weights)) : std::nullopt,
                     name);
}

MetricPair metric(const std::string& kind, Node labels, Node predictions,
                  std::optional<Node> weights) {
  if (kind == "mean") return mean(predictions, weights);
  if (kind == "accuracy") return accuracy(labels, predictions, weights);
  if (kind == "mse") return mean_squared_error(labels, predictions, weights);
  if (kind == "average_loss") return average_loss(predictions, weights);
  throw Error("unknown metric '" + kind + "'");
}

}  // namespace metrics
}  // namespace est
