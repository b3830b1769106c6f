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

#include "est/graph.hpp"

#include <cmath>

#include "est/hash.hpp"

namespace est {

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kTrain:
      return "train";
    case Mode::kEval:
      return "eval";
    case Mode::kPredict:
      return "predict";
  }
  return "unknown";
}

const Shape& Node::shape() const { return graph_->node(id_).shape; }

std::vector<std::optional<Tensor>> Op::backward(
    std::span<const Tensor* const>, const Tensor&, const Tensor&,
    ExecContext&) const {
  throw GraphError("op '" + std::string(type()) + "' has no gradient");
}

namespace {

class PlaceholderOp final : public Op {
 public:
  explicit PlaceholderOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view type() const override { return "placeholder"; }
  Shape infer_shape(std::span<const Shape>) const override { return shape_; }
  Tensor forward(std::span<const Tensor* const>,
                 ExecContext& ctx) const override {
    const auto& values = ctx.feed().values;
    auto it = values.find(ctx.current_node());
    if (it == values.end()) {
      throw ExecutionError("placeholder " + std::to_string(ctx.current_node()) +
                           " of shape " + shape_.to_string() + " was not fed");
    }
    if (!it->second.shape().compatible_with(shape_)) {
      throw ExecutionError("placeholder expects shape " + shape_.to_string() +
                           ", fed " + it->second.shape().to_string());
    }
    return it->second;
  }
  std::vector<std::optional<Tensor>> backward(std::span<const Tensor* const>,
                                              const Tensor&, const Tensor&,
                                              ExecContext&) const override {
    return {};
  }

 private:
  Shape shape_;
};

class ConstantOp final : public Op {
 public:
  explicit ConstantOp(Tensor value) : value_(std::move(value)) {}
  std::string_view type() const override { return "constant"; }
  Shape infer_shape(std::span<const Shape>) const override {
    return value_.shape();
  }
  Tensor forward(std::span<const Tensor* const>, ExecContext&) const override {
    return value_;
  }
  std::vector<std::optional<Tensor>> backward(std::span<const Tensor* const>,
                                              const Tensor&, const Tensor&,
                                              ExecContext&) const override {
    return {};
  }

 private:
  Tensor value_;
};

class VariableReadOp final : public Op {
 public:
  VariableReadOp(int index, Shape shape)
      : index_(index), shape_(std::move(shape)) {}
  std::string_view type() const override { return "variable"; }
  Shape infer_shape(std::span<const Shape>) const override { return shape_; }
  Tensor forward(std::span<const Tensor* const>,
                 ExecContext& ctx) const override {
    return ctx.graph().variable_def(index_).value;
  }
  std::vector<std::optional<Tensor>> backward(std::span<const Tensor* const>,
                                              const Tensor&,
                                              const Tensor& grad_output,
                                              ExecContext& ctx) const override {
    ctx.accumulate_variable_grad(index_, grad_output);
    return {};
  }

 private:
  int index_;
  Shape shape_;
};

void add_into(Tensor& acc, const Tensor& g) {
  if (acc.shape() != g.shape()) {
    throw ExecutionError("gradient shape mismatch " + acc.shape().to_string() +
                         " vs " + g.shape().to_string());
  }
  auto a = acc.values();
  auto b = g.values();
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

namespace init {

Initializer zeros() {
  return [](const Shape& s, std::mt19937_64&) { return Tensor(s); };
}

Initializer constant(double v) {
  return [v](const Shape& s, std::mt19937_64&) { return Tensor::filled(s, v); };
}

Initializer uniform(double lo, double hi) {
  return [lo, hi](const Shape& s, std::mt19937_64& rng) {
    Tensor t(s);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
}

Initializer glorot_uniform() {
  return [](const Shape& s, std::mt19937_64& rng) {
    double fan_in = 1;
    double fan_out = 1;
    if (s.rank() >= 2) {
      // Leading dims (e.g. conv kernel spatial extent) scale both fans.
      double receptive = 1;
      for (size_t i = 0; i + 2 < s.rank(); ++i) {
        receptive *= static_cast<double>(s[i]);
      }
      fan_in = static_cast<double>(s[s.rank() - 2]) * receptive;
      fan_out = static_cast<double>(s[s.rank() - 1]) * receptive;
    } else if (s.rank() == 1) {
      fan_in = fan_out = static_cast<double>(s[0]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(s);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
}

Initializer from_tensor(Tensor t) {
  return [t = std::move(t)](const Shape& s, std::mt19937_64&) {
    if (t.shape() != s) {
      throw GraphError("initializer tensor has shape " + t.shape().to_string() +
                       ", variable needs " + s.to_string());
    }
    return t;
  };
}

}  // namespace init

const std::string& Variable::name() const {
  return graph_->variable_def(index_).name;
}
const Shape& Variable::shape() const {
  return graph_->variable_def(index_).value.shape();
}
bool Variable::trainable() const {
  return graph_->variable_def(index_).trainable;
}
const Tensor& Variable::value() const {
  return graph_->variable_def(index_).value;
}
void Variable::assign(const Tensor& t) const {
  auto& def = graph_->variable_def(index_);
  if (t.shape() != def.value.shape()) {
    throw ExecutionError("cannot assign shape " + t.shape().to_string() +
                         " to variable '" + def.name + "' of shape " +
                         def.value.shape().to_string());
  }
  def.value = t;
}
Node Variable::node() const {
  return Node(graph_, graph_->variable_def(index_).read_node);
}

Graph::Graph(uint64_t seed) : seed_(seed) {
  create_variable("global_step", Tensor::scalar(0.0), /*trainable=*/false);
}

Node Graph::add(std::shared_ptr<const Op> op, std::vector<Node> inputs) {
  std::vector<Shape> shapes;
  std::vector<int> ids;
  shapes.reserve(inputs.size());
  for (const Node& in : inputs) {
    if (in.graph() != this || !in.valid()) {
      throw GraphError("op '" + std::string(op->type()) +
                       "' received an input from a different graph");
    }
    shapes.push_back(nodes_[static_cast<size_t>(in.id())].shape);
    ids.push_back(in.id());
  }
  Shape out = op->infer_shape(shapes);
  nodes_.push_back(NodeDef{std::move(op), std::move(ids), std::move(out)});
  return Node(this, static_cast<int>(nodes_.size()) - 1);
}

Node Graph::placeholder(Shape shape) {
  return add(std::make_shared<PlaceholderOp>(std::move(shape)), {});
}

Node Graph::constant(Tensor value) {
  return add(std::make_shared<ConstantOp>(std::move(value)), {});
}

Variable Graph::create_variable(const std::string& full_name, Tensor value,
                                bool trainable, std::string slot_of) {
  if (variable_index_.contains(full_name)) {
    throw GraphError("variable '" + full_name + "' already exists");
  }
  const int index = static_cast<int>(variables_.size());
  Shape shape = value.shape();
  variables_.push_back(
      VariableDef{full_name, std::move(value), trainable, -1, std::move(slot_of)});
  variable_index_[full_name] = index;
  Node read = add(std::make_shared<VariableReadOp>(index, shape), {});
  variables_.back().read_node = read.id();
  return Variable(this, index);
}

Variable Graph::get_variable(const std::string& name, const Shape& shape,
                             Initializer initializer,
                             std::optional<Reuse> reuse, bool trainable) {
  const std::string full = scoped_name(name);
  const Reuse mode = reuse.value_or(current_reuse());
  auto it = variable_index_.find(full);
  if (it != variable_index_.end()) {
    if (mode == Reuse::kNo) {
      throw GraphError("variable '" + full +
                       "' already exists; set reuse to share it");
    }
    Variable v(this, it->second);
    if (v.shape() != shape) {
      throw GraphError("variable '" + full + "' has shape " +
                       v.shape().to_string() + ", requested " +
                       shape.to_string());
    }
    return v;
  }
  if (mode == Reuse::kYes) {
    throw GraphError("variable '" + full +
                     "' does not exist; reuse requires an existing variable");
  }
  if (!shape.fully_defined()) {
    throw GraphError("variable '" + full + "' needs a fully defined shape, got " +
                     shape.to_string());
  }
  if (!initializer) {
    initializer = shape.rank() >= 2 ? init::glorot_uniform() : init::zeros();
  }
  std::mt19937_64 rng(mix_seed(seed_, fnv1a64(full)));
  Tensor value = initializer(shape, rng);
  if (value.shape() != shape) {
    throw GraphError("initializer for '" + full + "' produced shape " +
                     value.shape().to_string());
  }
  return create_variable(full, std::move(value), trainable);
}

std::optional<Variable> Graph::find_variable(const std::string& full_name) {
  auto it = variable_index_.find(full_name);
  if (it == variable_index_.end()) return std::nullopt;
  return Variable(this, it->second);
}

std::vector<Variable> Graph::variables() {
  std::vector<Variable> out;
  for (size_t i = 0; i < variables_.size(); ++i) {
    out.emplace_back(this, static_cast<int>(i));
  }
  return out;
}

std::vector<Variable> Graph::trainable_variables() {
  std::vector<Variable> out;
  for (size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].trainable) out.emplace_back(this, static_cast<int>(i));
  }
  return out;
}

int64_t Graph::global_step() const {
  return static_cast<int64_t>(variables_.front().value.item());
}

void Graph::push_scope(std::string name, std::optional<Reuse> reuse) {
  scopes_.push_back(ScopeFrame{std::move(name), reuse});
}

void Graph::pop_scope() {
  if (scopes_.empty()) throw GraphError("pop_scope with no open scope");
  scopes_.pop_back();
}

std::string Graph::scoped_name(const std::string& name) const {
  std::string out;
  for (const auto& frame : scopes_) {
    if (frame.name.empty()) continue;
    out += frame.name;
    out += '/';
  }
  return out + name;
}

Reuse Graph::current_reuse() const {
  for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
    if (it->reuse) return *it->reuse;
  }
  return Reuse::kNo;
}

std::string Graph::unique_name(const std::string& base) {
  const int n = name_counts_[scoped_name(base)]++;
  return n == 0 ? base : base + "_" + std::to_string(n);
}

VariableScope::VariableScope(Graph& g, std::string name,
                             std::optional<Reuse> reuse)
    : graph_(g) {
  graph_.push_scope(std::move(name), reuse);
}

VariableScope::~VariableScope() { graph_.pop_scope(); }

ExecContext::ExecContext(Graph& graph, const Feed& feed, GradientSink* sink)
    : graph_(graph), feed_(feed), sink_(sink), memo_(graph.num_nodes()) {}

const Features& ExecContext::features() const {
  if (feed_.features == nullptr) {
    throw ExecutionError("graph reads features but none were fed");
  }
  return *feed_.features;
}

const Labels& ExecContext::labels() const {
  if (feed_.labels == nullptr) {
    throw ExecutionError("graph reads labels but none were fed");
  }
  return *feed_.labels;
}

const Tensor& ExecContext::evaluate(int id) {
  auto& slot = memo_.at(static_cast<size_t>(id));
  if (slot) return *slot;
  const auto& def = graph_.node(id);
  std::vector<const Tensor*> inputs;
  inputs.reserve(def.inputs.size());
  for (int in : def.inputs) inputs.push_back(&evaluate(in));
  const int saved = current_node_;
  current_node_ = id;
  Tensor out = def.op->forward(inputs, *this);
  current_node_ = saved;
  slot = std::move(out);
  return *slot;
}

std::mt19937_64 ExecContext::node_rng() {
  const auto step = static_cast<uint64_t>(graph_.global_step());
  return std::mt19937_64(
      mix_seed(mix_seed(graph_.seed(), step), static_cast<uint64_t>(current_node_)));
}

void ExecContext::accumulate_variable_grad(int var_index, const Tensor& grad) {
  if (var_grads_ == nullptr) {
    throw ExecutionError("variable gradient outside of backprop");
  }
  auto it = var_grads_->find(var_index);
  if (it == var_grads_->end()) {
    var_grads_->emplace(var_index, grad);
  } else {
    add_into(it->second, grad);
  }
}

std::map<int, Tensor> ExecContext::backprop(int loss) {
  const Tensor& loss_value = evaluate(loss);
  if (loss_value.size() != 1) {
    throw GraphError("gradients: loss must be a scalar, got shape " +
                     loss_value.shape().to_string());
  }
  std::vector<std::optional<Tensor>> grads(static_cast<size_t>(loss) + 1);
  grads[static_cast<size_t>(loss)] = Tensor::filled(loss_value.shape(), 1.0);
  std::map<int, Tensor> var_grads;
  var_grads_ = &var_grads;
  const int saved = current_node_;
  for (int id = loss; id >= 0; --id) {
    auto& g = grads[static_cast<size_t>(id)];
    if (!g) continue;
    const auto& def = graph_.node(id);
    const auto& out = memo_[static_cast<size_t>(id)];
    if (!out) continue;
    std::vector<const Tensor*> inputs;
    inputs.reserve(def.inputs.size());
    for (int in : def.inputs) inputs.push_back(&*memo_[static_cast<size_t>(in)]);
    current_node_ = id;
    auto input_grads = def.op->backward(inputs, *out, *g, *this);
    for (size_t i = 0; i < input_grads.size() && i < def.inputs.size(); ++i) {
      if (!input_grads[i]) continue;
      auto& dst = grads[static_cast<size_t>(def.inputs[i])];
      if (dst) {
        add_into(*dst, *input_grads[i]);
      } else {
        dst = std::move(input_grads[i]);
      }
    }
    g.reset();
  }
  current_node_ = saved;
  var_grads_ = nullptr;
  return var_grads;
}

std::vector<Tensor> Session::run_impl(std::span<const Node> fetches,
                                      const Feed& feed, GradientSink* sink) {
  ExecContext ctx(graph_, feed, sink);
  for (const Node& f : fetches) {
    if (f.graph() != &graph_) throw GraphError("fetch from a different graph");
    if (!graph_.node(f.id()).op->stateful()) ctx.evaluate(f.id());
  }
  for (const Node& f : fetches) {
    if (graph_.node(f.id()).op->stateful()) ctx.evaluate(f.id());
  }
  std::vector<Tensor> out;
  out.reserve(fetches.size());
  for (const Node& f : fetches) out.push_back(ctx.evaluate(f.id()));
  return out;
}

std::vector<Tensor> Session::run(std::span<const Node> fetches,
                                 const Feed& feed) {
  return run_impl(fetches, feed, nullptr);
}

Tensor Session::run(Node fetch, const Feed& feed) {
  return run_impl(std::span<const Node>(&fetch, 1), feed, nullptr).front();
}

std::vector<Tensor> Session::run_collecting(std::span<const Node> fetches,
                                            const Feed& feed,
                                            GradientSink& sink) {
  return run_impl(fetches, feed, &sink);
}

std::map<std::string, Tensor> gradients(Node loss, std::span<const Variable> wrt,
                                        const Feed& feed) {
  if (!loss.valid()) throw GraphError("gradients: invalid loss node");
  Graph& g = *loss.graph();
  if (loss.shape().rank() != 0) {
    throw GraphError("gradients: loss must be a scalar, got shape " +
                     loss.shape().to_string());
  }
  ExecContext ctx(g, feed, nullptr);
  auto by_index = ctx.backprop(loss.id());
  std::map<std::string, Tensor> out;
  for (const Variable& v : wrt) {
    auto it = by_index.find(v.index());
    out[v.name()] = it == by_index.end() ? Tensor(v.shape()) : it->second;
  }
  return out;
}

}  // namespace est
