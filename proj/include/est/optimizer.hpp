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

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "est/graph.hpp"

namespace est {

// First-order update rule. Slots are per-variable state tensors (same
// shape as the variable) stored as non-trainable graph variables named
// "<variable>/<slot>", so they are checkpointed like everything else.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::string> slot_names() const { return {}; }
  // Applies one update in place. `slots` follows slot_names() order.
  virtual void apply(Tensor& value, const Tensor& grad,
                     std::span<Tensor* const> slots) const = 0;
};

class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double learning_rate) : lr_(learning_rate) {}
  std::string name() const override { return "sgd"; }
  void apply(Tensor& value, const Tensor& grad,
             std::span<Tensor* const> slots) const override;
  double learning_rate() const { return lr_; }

 private:
  double lr_;
};

// acc += g^2; v -= lr * g / (sqrt(acc) + eps)
class AdagradOptimizer final : public Optimizer {
 public:
  explicit AdagradOptimizer(double learning_rate, double epsilon = 1e-8)
      : lr_(learning_rate), eps_(epsilon) {}
  std::string name() const override { return "adagrad"; }
  std::vector<std::string> slot_names() const override { return {"Adagrad"}; }
  void apply(Tensor& value, const Tensor& grad,
             std::span<Tensor* const> slots) const override;
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double eps_;
};

// Builds an optimizer by name ("sgd" or "adagrad").
std::shared_ptr<const Optimizer> make_optimizer(const std::string& name,
                                                double learning_rate);

// v <- v - lr * g for every variable with a gradient.
void apply_sgd(std::span<const Variable> vars,
               const std::map<std::string, Tensor>& grads,
               double learning_rate);
// Adagrad update; `accumulators` parallels `vars`.
void apply_adagrad(std::span<const Variable> vars,
                   const std::map<std::string, Tensor>& grads,
                   double learning_rate, std::span<const Variable> accumulators,
                   double epsilon = 1e-8);

// One optimizer applied to a subset of variables.
struct OptimizerGroup {
  std::shared_ptr<const Optimizer> optimizer;
  std::vector<Variable> variables;
};

// Training op: on each execution computes gradients of `loss`, applies each
// group's optimizer to its variables, and increments global_step once.
// Slot variables are created here. When the execution carries a
// GradientSink, gradients are recorded instead of applied.
Node minimize(Node loss, std::vector<OptimizerGroup> groups);
// Convenience: one optimizer over every trainable variable.
Node minimize(Node loss, std::shared_ptr<const Optimizer> optimizer);

// Applies an optimizer update to `value` using slot tensors looked up by
// name in `slot_store` ("<var>/<slot>"), creating zero slots as needed.
// Used by parameter-server shards, which hold slots next to the variable.
void apply_with_slots(const Optimizer& optimizer, const std::string& var_name,
                      Tensor& value, const Tensor& grad,
                      std::map<std::string, Tensor>& slot_store);

}  // namespace est
