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

#include "est/optimizer.hpp"

#include <cmath>

namespace est {
namespace {

void check_same_shape(const Tensor& value, const Tensor& grad) {
  if (value.shape() != grad.shape()) {
    throw ExecutionError("gradient shape " + grad.shape().to_string() +
                         " does not match variable shape " +
                         value.shape().to_string());
  }
}

struct BoundGroup {
  std::shared_ptr<const Optimizer> optimizer;
  std::vector<int> vars;
  std::vector<std::vector<int>> slots;  // per var, per slot name
};

class TrainOp final : public Op {
 public:
  explicit TrainOp(std::vector<BoundGroup> groups) : groups_(std::move(groups)) {}
  std::string_view type() const override { return "train"; }
  bool stateful() const override { return true; }
  Shape infer_shape(std::span<const Shape>) const override { return Shape{}; }

  Tensor forward(std::span<const Tensor* const> inputs,
                 ExecContext& ctx) const override {
    Graph& g = ctx.graph();
    const int loss_id = g.node(ctx.current_node()).inputs.front();
    if (!inputs.front()->all_finite()) {
      throw NanLossError(g.global_step());
    }
    auto grads = ctx.backprop(loss_id);
    if (GradientSink* sink = ctx.gradient_sink()) {
      sink->loss = inputs.front()->item();
      for (const auto& group : groups_) {
        for (int v : group.vars) {
          auto it = grads.find(v);
          if (it == grads.end()) continue;
          sink->grads[g.variable_def(v).name] =
              GradientSink::Entry{it->second, group.optimizer};
        }
      }
      return Tensor::scalar(static_cast<double>(g.global_step()));
    }
    for (const auto& group : groups_) {
      for (size_t i = 0; i < group.vars.size(); ++i) {
        auto it = grads.find(group.vars[i]);
        if (it == grads.end()) continue;  // unreachable from the loss
        std::vector<Tensor*> slots;
        for (int s : group.slots[i]) slots.push_back(&g.variable_def(s).value);
        Tensor& value = g.variable_def(group.vars[i]).value;
        check_same_shape(value, it->second);
        group.optimizer->apply(value, it->second, slots);
      }
    }
    Tensor& step = g.variable_def(g.global_step_variable().index()).value;
    step[0] += 1.0;
    return Tensor::scalar(step[0]);
  }

 private:
  std::vector<BoundGroup> groups_;
};

}  // namespace

void SgdOptimizer::apply(Tensor& value, const Tensor& grad,
                         std::span<Tensor* const>) const {
  check_same_shape(value, grad);
  for (size_t i = 0; i < value.size(); ++i) value[i] -= lr_ * grad[i];
}

void AdagradOptimizer::apply(Tensor& value, const Tensor& grad,
                             std::span<Tensor* const> slots) const {
  check_same_shape(value, grad);
  Tensor& acc = *slots.front();
  for (size_t i = 0; i < value.size(); ++i) {
    acc[i] += grad[i] * grad[i];
    value[i] -= lr_ * grad[i] / (std::sqrt(acc[i]) + eps_);
  }
}

std::shared_ptr<const Optimizer> make_optimizer(const std::string& name,
                                                double learning_rate) {
  if (name == "sgd") return std::make_shared<SgdOptimizer>(learning_rate);
  if (name == "adagrad") return std::make_shared<AdagradOptimizer>(learning_rate);
  throw Error("unknown optimizer '" + name + "' (expected sgd or adagrad)");
}

void apply_sgd(std::span<const Variable> vars,
               const std::map<std::string, Tensor>& grads,
               double learning_rate) {
  SgdOptimizer opt(learning_rate);
  for (const Variable& v : vars) {
    auto it = grads.find(v.name());
    if (it == grads.end()) continue;
    Tensor value = v.value();
    opt.apply(value, it->second, {});
    v.assign(value);
  }
}

void apply_adagrad(std::span<const Variable> vars,
                   const std::map<std::string, Tensor>& grads,
                   double learning_rate, std::span<const Variable> accumulators,
                   double epsilon) {
  if (vars.size() != accumulators.size()) {
    throw Error("apply_adagrad: one accumulator per variable required");
  }
  AdagradOptimizer opt(learning_rate, epsilon);
  for (size_t i = 0; i < vars.size(); ++i) {
    auto it = grads.find(vars[i].name());
    if (it == grads.end()) continue;
    Tensor value = vars[i].value();
    Tensor acc = accumulators[i].value();
    Tensor* slot = &acc;
    opt.apply(value, it->second, std::span<Tensor* const>(&slot, 1));
    vars[i].assign(value);
    accumulators[i].assign(acc);
  }
}

Node minimize(Node loss, std::vector<OptimizerGroup> groups) {
  if (!loss.valid()) throw GraphError("minimize: invalid loss");
  if (loss.shape().rank() != 0) {
    throw GraphError("minimize: loss must be a scalar, got shape " +
                     loss.shape().to_string());
  }
  Graph& g = *loss.graph();
  std::vector<BoundGroup> bound;
  for (auto& group : groups) {
    if (!group.optimizer) throw GraphError("minimize: null optimizer");
    BoundGroup b{group.optimizer, {}, {}};
    for (const Variable& v : group.variables) {
      b.vars.push_back(v.index());
      std::vector<int> slots;
      for (const auto& slot : group.optimizer->slot_names()) {
        const std::string name = v.name() + "/" + slot;
        auto existing = g.find_variable(name);
        Variable s = existing ? *existing
                              : g.create_variable(name, Tensor(v.shape()),
                                                  /*trainable=*/false, v.name());
        slots.push_back(s.index());
      }
      b.slots.push_back(std::move(slots));
    }
    bound.push_back(std::move(b));
  }
  return g.add(std::make_shared<TrainOp>(std::move(bound)), {loss});
}

Node minimize(Node loss, std::shared_ptr<const Optimizer> optimizer) {
  if (!loss.valid()) throw GraphError("minimize: invalid loss");
  return minimize(loss, {OptimizerGroup{std::move(optimizer),
                                        loss.graph()->trainable_variables()}});
}

void apply_with_slots(const Optimizer& optimizer, const std::string& var_name,
                      Tensor& value, const Tensor& grad,
                      std::map<std::string, Tensor>& slot_store) {
  std::vector<Tensor*> slots;
  for (const auto& slot : optimizer.slot_names()) {
    auto [it, inserted] =
        slot_store.try_emplace(var_name + "/" + slot, value.shape());
    slots.push_back(&it->second);
  }
  optimizer.apply(value, grad, slots);
}

}  // namespace est
