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

#include "est/heads.hpp"

#include <set>

#include "est/ops.hpp"

namespace est {
namespace {

using json = nlohmann::json;

class MultiClassHead final : public Head {
 public:
  MultiClassHead(int64_t n_classes, std::string label, std::string name, std::string weight)
      : Head(std::move(label), std::move(name), std::move(weight)), n_classes_(n_classes) {
    if (n_classes < 2) throw ConfigError("multi_class head: n_classes must be >= 2");
  }
  int64_t logits_dimension() const override { return n_classes_; }
  json to_json() const override {
    return {{"type", "multi_class"}, {"n_classes", n_classes_}, {"label_name", label_name_},
            {"head_name", head_name_}, {"weight_column", weight_column_}};
  }
  Outputs build(const FeatureInputs& features, Mode mode, const HeadInput& input,
                const LabelInputs& labels) const override {
    Outputs out;
    Node logits = logits_for(input);
    Node probs = softmax(logits);
    Node class_id = argmax(probs);
    out.predictions = {{"logits", logits}, {"probabilities", probs}, {"class_id", class_id}};
    if (mode == Mode::kPredict) return out;
    Node y = labels.get(label_name_);
    Node per = losses::per_example(LossKind::kSoftmaxCrossEntropy, logits, y);
    const auto w = weights(features);
    out.loss = losses::weighted_mean(per, w);
    if (mode == Mode::kEval) {
      out.metrics["accuracy"] = metrics::accuracy(y, class_id, w);
      out.metrics["average_loss"] = metrics::average_loss(per, w);
    }
    return out;
  }

 private:
  int64_t n_classes_;
};

class BinaryHead final : public Head {
 public:
  BinaryHead(std::string label, std::string name, std::string weight)
      : Head(std::move(label), std::move(name), std::move(weight)) {}
  int64_t logits_dimension() const override { return 1; }
  json to_json() const override {
    return {{"type", "binary"}, {"label_name", label_name_}, {"head_name", head_name_},
            {"weight_column", weight_column_}};
  }
  Outputs build(const FeatureInputs& features, Mode mode, const HeadInput& input,
                const LabelInputs& labels) const override {
    Outputs out;
    Node logits = logits_for(input);
    Graph& g = *logits.graph();
    Node p = sigmoid(logits);
    Node probs = concat({sub(g.constant(Tensor::scalar(1.0)), p), p}, 1);
    Node class_id = argmax(probs);
    out.predictions = {{"logits", logits}, {"probabilities", probs}, {"class_id", class_id}};
    if (mode == Mode::kPredict) return out;
    Node y = labels.get(label_name_, {1});
    Node per = losses::per_example(LossKind::kSigmoidCrossEntropy, logits, y);
    const auto w = weights(features);
    out.loss = losses::weighted_mean(per, w);
    if (mode == Mode::kEval) {
      out.metrics["accuracy"] = metrics::accuracy(y, class_id, w);
      out.metrics["average_loss"] = metrics::average_loss(per, w);
    }
    return out;
  }
};

class RegressionHead final : public Head {
 public:
  RegressionHead(int64_t label_dim, std::string label, std::string name, std::string weight)
      : Head(std::move(label), std::move(name), std::move(weight)), label_dim_(label_dim) {
    if (label_dim < 1) throw ConfigError("regression head: label_dim must be >= 1");
  }
  int64_t logits_dimension() const override { return label_dim_; }
  json to_json() const override {
    return {{"type", "regression"}, {"label_dim", label_dim_}, {"label_name", label_name_},
            {"head_name", head_name_}, {"weight_column", weight_column_}};
  }
  Outputs build(const FeatureInputs& features, Mode mode, const HeadInput& input,
                const LabelInputs& labels) const override {
    Outputs out;
    Node logits = logits_for(input);
    out.predictions = {{"value", logits}};
    if (mode == Mode::kPredict) return out;
    Node y = labels.get(label_name_, {label_dim_});
    Node per = losses::per_example(LossKind::kMeanSquaredError, logits, y);
    const auto w = weights(features);
    out.loss = losses::weighted_mean(per, w);
    if (mode == Mode::kEval) out.metrics["average_loss"] = metrics::average_loss(per, w);
    return out;
  }

 private:
  int64_t label_dim_;
};

class MultiHead final : public Head {
 public:
  MultiHead(std::vector<HeadPtr> heads, std::vector<double> weights)
      : Head("", "", ""), heads_(std::move(heads)), loss_weights_(std::move(weights)) {
    if (heads_.empty()) throw ConfigError("multi_head: needs at least one head");
    if (loss_weights_.empty()) loss_weights_.assign(heads_.size(), 1.0);
    if (loss_weights_.size() != heads_.size()) {
      throw ConfigError("multi_head: " + std::to_string(loss_weights_.size()) +
                        " loss weights for " + std::to_string(heads_.size()) + " heads");
    }
    std::set<std::string> names;
    for (const auto& h : heads_) {
      if (!h) throw ConfigError("multi_head: null head");
      if (!names.insert(h->name()).second) {
        throw ConfigError("multi_head: duplicate head_name '" + h->name() + "'");
      }
    }
  }
  int64_t logits_dimension() const override {
    int64_t n = 0;
    for (const auto& h : heads_) n += h->logits_dimension();
    return n;
  }
  json to_json() const override {
    json hs = json::array();
    for (const auto& h : heads_) hs.push_back(h->to_json());
    return {{"type", "multi"}, {"heads", hs}, {"loss_weights", loss_weights_}};
  }
  Outputs build(const FeatureInputs& features, Mode mode, const HeadInput& input,
                const LabelInputs& labels) const override {
    Outputs out;
    Graph& g = *input.node.graph();
    const int64_t total = logits_dimension();
    if (input.kind == HeadInput::Kind::kLogits && input.node.shape().last() != total) {
      throw GraphError("multi_head: logits " + input.node.shape().to_string() +
                       " do not have width " + std::to_string(total));
    }
    int64_t offset = 0;
    for (size_t i = 0; i < heads_.size(); ++i) {
      const Head& h = *heads_[i];
      HeadInput child = input;
      if (input.kind == HeadInput::Kind::kLogits) {
        // Column slice as a product with a 0/1 selection matrix.
        const int64_t d = h.logits_dimension();
        Tensor sel(Shape{total, d});
        for (int64_t j = 0; j < d; ++j) sel[static_cast<size_t>((offset + j) * d + j)] = 1.0;
        child.node = matmul(input.node, g.constant(sel));
        offset += d;
      }
      Outputs o = h.build(features, mode, child, labels);
      for (auto& [k, v] : o.predictions) out.predictions[h.name() + "/" + k] = v;
      for (auto& [k, v] : o.metrics) out.metrics[h.name() + "/" + k] = v;
      if (o.loss) {
        Node term = mul(*o.loss, g.constant(Tensor::scalar(loss_weights_[i])));
        out.loss = out.loss ? add(*out.loss, term) : term;
      }
    }
    return out;
  }

 private:
  std::vector<HeadPtr> heads_;
  std::vector<double> loss_weights_;
};

}  // namespace

Head::Head(std::string label_name, std::string head_name, std::string weight_column)
    : label_name_(std::move(label_name)),
      head_name_(std::move(head_name)),
      weight_column_(std::move(weight_column)) {}

Node Head::logits_for(const HeadInput& input) const {
  if (!input.node.valid()) throw GraphError("head '" + head_name_ + "': invalid input");
  const int64_t d = logits_dimension();
  if (input.kind == HeadInput::Kind::kLogits) {
    const Shape& s = input.node.shape();
    if (s.rank() != 2 || s[1] != d) {
      throw GraphError("head '" + head_name_ + "': logits must be [batch, " +
                       std::to_string(d) + "], got " + s.to_string());
    }
    return input.node;
  }
  Graph& g = *input.node.graph();
  VariableScope scope(g, head_name_);
  return layers::dense(input.node, d, {}, "logits");
}

std::optional<Node> Head::weights(const FeatureInputs& features) const {
  if (weight_column_.empty()) return std::nullopt;
  return features.dense(weight_column_, {});
}

HeadPtr multi_class_head(int64_t n_classes, const std::string& label_name,
                         const std::string& head_name, const std::string& weight_column) {
  return std::make_shared<MultiClassHead>(n_classes, label_name, head_name, weight_column);
}

HeadPtr binary_classification_head(const std::string& label_name, const std::string& head_name,
                                   const std::string& weight_column) {
  return std::make_shared<BinaryHead>(label_name, head_name, weight_column);
}

HeadPtr regression_head(int64_t label_dim, const std::string& label_name,
                        const std::string& head_name, const std::string& weight_column) {
  return std::make_shared<RegressionHead>(label_dim, label_name, head_name, weight_column);
}

HeadPtr multi_head(std::vector<HeadPtr> heads, std::vector<double> loss_weights) {
  return std::make_shared<MultiHead>(std::move(heads), std::move(loss_weights));
}

HeadPtr head_from_json(const json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    const std::string label = j.value("label_name", std::string("label"));
    const std::string name = j.value("head_name", std::string("head"));
    const std::string weight = j.value("weight_column", std::string());
    if (type == "multi_class") {
      return multi_class_head(j.at("n_classes").get<int64_t>(), label, name, weight);
    }
    if (type == "binary") return binary_classification_head(label, name, weight);
    if (type == "regression") {
      return regression_head(j.value("label_dim", int64_t{1}), label, name, weight);
    }
    if (type == "multi") {
      std::vector<HeadPtr> hs;
      for (const auto& h : j.at("heads")) hs.push_back(head_from_json(h));
      return multi_head(std::move(hs), j.value("loss_weights", std::vector<double>{}));
    }
    throw ConfigError("unknown head type '" + type + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("head: ") + e.what());
  }
}

EstimatorSpec create_estimator_spec(const Head& head, const FeatureInputs& features, Mode mode,
                                    const HeadInput& input, const LabelInputs& labels,
                                    const TrainOpFn& train_op_fn) {
  if (mode == Mode::kTrain && !train_op_fn) {
    throw GraphError("create_estimator_spec: TRAIN mode needs a train_op_fn");
  }
  if (mode != Mode::kPredict && !labels.present()) {
    throw GraphError("create_estimator_spec: " + std::string(mode_name(mode)) +
                     " mode needs labels");
  }
  Head::Outputs o = head.build(features, mode, input, labels);
  EstimatorSpec spec;
  spec.mode = mode;
  spec.predictions = std::move(o.predictions);
  spec.export_outputs = signature_of(spec.predictions);
  if (mode != Mode::kPredict) spec.loss = o.loss;
  if (mode == Mode::kTrain) spec.train_op = train_op_fn(*o.loss);
  if (mode == Mode::kEval) spec.eval_metrics = std::move(o.metrics);
  spec.validate();
  return spec;
}

}  // namespace est
