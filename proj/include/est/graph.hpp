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

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "est/example.hpp"
#include "est/tensor.hpp"

namespace est {

enum class Mode { kTrain, kEval, kPredict };

std::string_view mode_name(Mode mode);

class Graph;
class ExecContext;

// Handle to the output of one graph node.
class Node {
 public:
  Node() = default;
  Node(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }
  // Static shape; the batch dim may be Shape::kUnknown.
  const Shape& shape() const;

  bool operator==(const Node&) const = default;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// A primitive operation. Implementations define shape inference, the
// forward computation and (for differentiable ops) the vector-Jacobian
// product.
class Op {
 public:
  virtual ~Op() = default;

  virtual std::string_view type() const = 0;
  virtual Shape infer_shape(std::span<const Shape> inputs) const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs,
                         ExecContext& ctx) const = 0;
  // Gradient of the loss wrt each input given the gradient wrt the output.
  // An empty optional means "no gradient flows to this input".
  virtual std::vector<std::optional<Tensor>> backward(
      std::span<const Tensor* const> inputs, const Tensor& output,
      const Tensor& grad_output, ExecContext& ctx) const;
  // Stateful ops (training steps, metric updates) mutate variables and are
  // executed after every stateless fetch of the same run.
  virtual bool stateful() const { return false; }
};

using Initializer = std::function<Tensor(const Shape&, std::mt19937_64&)>;

namespace init {
Initializer zeros();
Initializer constant(double v);
Initializer uniform(double lo, double hi);
// Glorot/Xavier uniform using the last two dims as (fan_in, fan_out).
Initializer glorot_uniform();
Initializer from_tensor(Tensor t);
}  // namespace init

enum class Reuse {
  kNo,    // the name must be unused
  kYes,   // the variable must already exist
  kAuto,  // create if missing, otherwise reuse
};

struct VariableDef {
  std::string name;
  Tensor value;
  bool trainable = true;
  int read_node = -1;
  // Name of the primary variable when this is an optimizer slot.
  std::string slot_of;
};

// Handle to a named mutable variable owned by a Graph.
class Variable {
 public:
  Variable() = default;
  Variable(Graph* graph, int index) : graph_(graph), index_(index) {}

  const std::string& name() const;
  const Shape& shape() const;
  bool trainable() const;
  const Tensor& value() const;
  // Replaces the value; the shape must not change.
  void assign(const Tensor& t) const;
  // Graph node reading the current value.
  Node node() const;
  int index() const { return index_; }
  bool valid() const { return graph_ != nullptr; }

  bool operator==(const Variable&) const = default;

 private:
  Graph* graph_ = nullptr;
  int index_ = -1;
};

// Build-then-execute dataflow graph plus the variables it reads.
class Graph {
 public:
  struct NodeDef {
    std::shared_ptr<const Op> op;
    std::vector<int> inputs;
    Shape shape;
  };

  explicit Graph(uint64_t seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  uint64_t seed() const { return seed_; }

  // Adds a node; infers the static shape and validates inputs.
  Node add(std::shared_ptr<const Op> op, std::vector<Node> inputs);
  const NodeDef& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }
  size_t num_nodes() const { return nodes_.size(); }

  // Placeholder fed through Feed::values.
  Node placeholder(Shape shape);
  Node constant(Tensor value);

  Variable get_variable(const std::string& name, const Shape& shape,
                        Initializer initializer = {},
                        std::optional<Reuse> reuse = std::nullopt,
                        bool trainable = true);
  // Creates a variable with a fully qualified name, ignoring scopes.
  Variable create_variable(const std::string& full_name, Tensor value,
                           bool trainable, std::string slot_of = {});
  std::optional<Variable> find_variable(const std::string& full_name);
  // All variables in creation order.
  std::vector<Variable> variables();
  std::vector<Variable> trainable_variables();
  Variable global_step_variable() { return Variable(this, 0); }
  int64_t global_step() const;

  VariableDef& variable_def(int index) {
    return variables_.at(static_cast<size_t>(index));
  }
  const VariableDef& variable_def(int index) const {
    return variables_.at(static_cast<size_t>(index));
  }

  // Scope management; prefer VariableScope.
  void push_scope(std::string name, std::optional<Reuse> reuse);
  void pop_scope();
  std::string scoped_name(const std::string& name) const;
  Reuse current_reuse() const;
  // "base", then "base_1", "base_2", ... within the current scope.
  std::string unique_name(const std::string& base);

 private:
  struct ScopeFrame {
    std::string name;
    std::optional<Reuse> reuse;
  };

  uint64_t seed_;
  std::vector<NodeDef> nodes_;
  std::vector<VariableDef> variables_;
  std::map<std::string, int> variable_index_;
  std::vector<ScopeFrame> scopes_;
  std::map<std::string, int> name_counts_;
};

// RAII variable scope. Names created inside are prefixed "scope/".
class VariableScope {
 public:
  VariableScope(Graph& g, std::string name,
                std::optional<Reuse> reuse = std::nullopt);
  ~VariableScope();
  VariableScope(const VariableScope&) = delete;
  VariableScope& operator=(const VariableScope&) = delete;

 private:
  Graph& graph_;
};

// Data supplied to one execution.
struct Feed {
  const Features* features = nullptr;
  const Labels* labels = nullptr;
  std::map<int, Tensor> values;  // placeholder node id -> value
};

class Optimizer;

// Receives gradients from training ops instead of applying them locally.
struct GradientSink {
  struct Entry {
    Tensor grad;
    std::shared_ptr<const Optimizer> optimizer;
  };
  std::map<std::string, Entry> grads;
  double loss = 0.0;
};

// Per-execution state: memoized node values, the feed, and RNG access.
class ExecContext {
 public:
  ExecContext(Graph& graph, const Feed& feed, GradientSink* sink);

  Graph& graph() { return graph_; }
  const Feed& feed() const { return feed_; }
  const Features& features() const;
  const Labels& labels() const;
  GradientSink* gradient_sink() { return sink_; }

  const Tensor& evaluate(int id);
  int current_node() const { return current_node_; }
  // Deterministic generator for the current node, keyed on graph seed,
  // global step and node id, so that a rerun of the same step reproduces.
  std::mt19937_64 node_rng();

  // Reverse-mode accumulation from scalar node `loss`. Returns gradients
  // for every variable the loss depends on, keyed by variable index.
  std::map<int, Tensor> backprop(int loss);
  void accumulate_variable_grad(int var_index, const Tensor& grad);

 private:
  Graph& graph_;
  const Feed& feed_;
  GradientSink* sink_;
  std::vector<std::optional<Tensor>> memo_;
  int current_node_ = -1;
  std::map<int, Tensor>* var_grads_ = nullptr;
};

// Executes fetches against a graph. Variables live in the graph, so a
// Session is a thin, cheap driver.
class Session {
 public:
  explicit Session(Graph& graph) : graph_(graph) {}

  std::vector<Tensor> run(std::span<const Node> fetches,
                          const Feed& feed = {});
  Tensor run(Node fetch, const Feed& feed = {});
  // Runs fetches; training ops inside record gradients into the returned
  // sink instead of updating variables.
  std::vector<Tensor> run_collecting(std::span<const Node> fetches,
                                     const Feed& feed, GradientSink& sink);

 private:
  std::vector<Tensor> run_impl(std::span<const Node> fetches, const Feed& feed,
                               GradientSink* sink);
  Graph& graph_;
};

// Gradient of scalar `loss` wrt each variable in `wrt`, keyed by variable
// name. Variables the loss does not depend on get a zero gradient.
std::map<std::string, Tensor> gradients(Node loss, std::span<const Variable> wrt,
                                        const Feed& feed = {});

}  // namespace est
