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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "est/graph.hpp"
#include "est/ops.hpp"
#include "est/optimizer.hpp"
#include "support/grad_check.hpp"

namespace est {
namespace {

using testing::build_kind_case;
using testing::build_random_composite;
using testing::check_gradients;

TEST(Primitive, MatmulIdentity) {
  Graph g;
  Node a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Node i = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Session s(g);
  EXPECT_EQ(s.run(matmul(a, i)), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Primitive, SoftmaxSymmetric) {
  Graph g;
  Session s(g);
  Tensor out = s.run(softmax(g.constant(Tensor::vector({0, 0}))));
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(Primitive, Conv2dOnesHandSummation) {
  Graph g;
  Node x = g.constant(Tensor::filled({1, 3, 3, 1}, 1.0));
  Node k = g.constant(Tensor::filled({3, 3, 1, 1}, 1.0));
  Tensor out = Session(g).run(conv2d(x, k));
  // Hand summation: nine products of 1*1.
  double expected = 0;
  for (int i = 0; i < 9; ++i) expected += 1.0 * 1.0;
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(out[0], expected);
}

TEST(Primitive, MatmulShapeMismatchNamesBothShapes) {
  Graph g;
  Node a = g.placeholder({Shape::kUnknown, 3});
  Node b = g.constant(Tensor(Shape{2, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected GraphError";
  } catch (const GraphError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[?,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
  }
}

TEST(Primitive, GatherOutOfRangeIsExecutionError) {
  Graph g;
  Node t = g.constant(Tensor(Shape{3, 2}));
  Node out = gather(t, g.constant(Tensor::vector({3})));
  EXPECT_THROW(Session(g).run(out), ExecutionError);
}

TEST(Primitive, UnknownKindRejected) {
  Graph g;
  Node a = g.constant(Tensor::scalar(1));
  EXPECT_THROW(primitive("fft", {a}), GraphError);
}

TEST(Primitive, AddBroadcastsOverBatch) {
  Graph g;
  Node x = g.placeholder({Shape::kUnknown, 2});
  Node b = g.constant(Tensor::vector({10, 20}));
  Node y = add(x, b);
  EXPECT_EQ(y.shape(), (Shape{Shape::kUnknown, 2}));
  Feed feed;
  feed.values[x.id()] = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(Session(g).run(y, feed), Tensor::matrix({{11, 22}, {13, 24}, {15, 26}}));
}

TEST(Primitive, DropoutIdentityOutsideTraining) {
  Graph g;
  std::mt19937_64 rng(3);
  Tensor t = testing::random_tensor({10, 10}, rng);
  Node x = g.constant(t);
  EXPECT_EQ(Session(g).run(dropout(x, 0.5, /*training=*/false)), t);
}

TEST(Primitive, ArgmaxTiesGoToLowestIndex) {
  Graph g;
  Tensor out = Session(g).run(argmax(g.constant(Tensor::matrix({{1, 3, 3}, {2, 2, 2}}))));
  EXPECT_EQ(out, Tensor::vector({1, 0}));
}

TEST(Primitive, SoftmaxRowsSumToOneAndStayInOpenInterval) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    Tensor t = testing::random_tensor({5, 7}, rng, -20, 20, 0);
    Tensor p = Session(g).run(softmax(g.constant(t)));
    for (int r = 0; r < 5; ++r) {
      double sum = 0;
      for (int c = 0; c < 7; ++c) {
        const double v = p.at(r, c);
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

class PrimitiveGradient : public ::testing::TestWithParam<std::string_view> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(std::hash<std::string_view>{}(GetParam()));
  Graph g(7);
  auto c = build_kind_case(g, GetParam(), rng);
  auto r = check_gradients(c.loss, c.vars);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, PrimitiveGradient,
                         ::testing::ValuesIn(primitive_kinds()),
                         [](const auto& info) { return std::string(info.param); });

TEST(Gradients, RandomCompositeGraphs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g(trial);
    auto c = build_random_composite(g, rng);
    auto r = check_gradients(c.loss, c.vars);
    ASSERT_LT(r.max_rel_error, 1e-5) << "trial " << trial << ": " << r.worst;
  }
}

TEST(Gradients, RandomTwoLayerMlp) {
  std::mt19937_64 rng(5);
  Graph g(5);
  Node x = g.constant(testing::random_tensor({6, 3}, rng));
  auto w1 = g.get_variable("w1", {3, 4});
  auto b1 = g.get_variable("b1", {4}, init::uniform(-0.5, 0.5));
  auto w2 = g.get_variable("w2", {4, 2});
  Node h = tanh(add(matmul(x, w1.node()), b1.node()));
  Node loss = reduce_mean(square(matmul(h, w2.node())));
  auto r = check_gradients(loss, {w1, b1, w2});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Gradients, LinearAndQuadratic) {
  Graph g;
  auto v = g.get_variable("v", {2}, init::from_tensor(Tensor::vector({1, 2})));
  auto gs = gradients(reduce_sum(v.node()), std::vector{v});
  EXPECT_EQ(gs.at("v"), Tensor::vector({1, 1}));
  gs = gradients(reduce_sum(mul(v.node(), v.node())), std::vector{v});
  EXPECT_EQ(gs.at("v"), Tensor::vector({2, 4}));
}

TEST(Gradients, UnreachableVariableGetsZeros) {
  Graph g;
  auto v = g.get_variable("v", {2}, init::constant(1));
  auto u = g.get_variable("u", {3}, init::constant(1));
  auto gs = gradients(reduce_sum(v.node()), std::vector{v, u});
  EXPECT_EQ(gs.at("u"), Tensor(Shape{3}));
}

TEST(Gradients, NonScalarLossRejected) {
  Graph g;
  auto v = g.get_variable("v", {2}, init::constant(1));
  EXPECT_THROW(gradients(v.node(), std::vector{v}), GraphError);
}

TEST(Variables, CreateReuseAndConflicts) {
  Graph g(1);
  Variable k;
  {
    VariableScope scope(g, "dense1");
    k = g.get_variable("kernel", {3, 2});
  }
  EXPECT_EQ(k.name(), "dense1/kernel");
  EXPECT_EQ(k.value().size(), 6u);
  {
    VariableScope scope(g, "dense1", Reuse::kYes);
    Variable again = g.get_variable("kernel", {3, 2});
    EXPECT_EQ(again, k);
    // Mutation through one handle is visible through the other.
    again.assign(Tensor::filled({3, 2}, 4.0));
    EXPECT_EQ(k.value(), Tensor::filled({3, 2}, 4.0));
    EXPECT_THROW(g.get_variable("kernel", {4, 2}), GraphError);
    EXPECT_THROW(g.get_variable("missing", {1}), GraphError);
  }
  {
    VariableScope scope(g, "dense1");
    EXPECT_THROW(g.get_variable("kernel", {3, 2}), GraphError);
  }
}

TEST(Variables, DefaultInitializers) {
  Graph g(9);
  auto w = g.get_variable("w", {30, 20});
  auto b = g.get_variable("b", {20});
  const double limit = std::sqrt(6.0 / 50.0);
  double max_abs = 0;
  for (double v : w.value().values()) max_abs = std::max(max_abs, std::fabs(v));
  EXPECT_LE(max_abs, limit);
  EXPECT_GT(max_abs, 0.5 * limit);
  EXPECT_EQ(b.value(), Tensor(Shape{20}));
}

TEST(Variables, ShapeImmutable) {
  Graph g;
  auto v = g.get_variable("v", {2});
  EXPECT_THROW(v.assign(Tensor(Shape{3})), ExecutionError);
}

TEST(Optimizers, SgdExamples) {
  Graph g;
  auto v = g.get_variable("v", {1}, init::constant(1.0));
  apply_sgd(std::vector{v}, {{"v", Tensor::vector({1.0})}}, 0.1);
  EXPECT_DOUBLE_EQ(v.value()[0], 0.9);
  apply_sgd(std::vector{v}, {{"v", Tensor::vector({5.0})}}, 0.0);
  EXPECT_DOUBLE_EQ(v.value()[0], 0.9);
}

TEST(Optimizers, SgdConvergesGeometrically) {
  // loss = (v-3)^2, v0 = 0, lr = 0.1: v_k - 3 = -3 * 0.8^k.
  Graph g;
  auto v = g.get_variable("v", {}, init::constant(0.0));
  Node loss = square(sub(v.node(), g.constant(Tensor::scalar(3.0))));
  Node train = minimize(loss, std::make_shared<SgdOptimizer>(0.1));
  Session s(g);
  for (int i = 0; i < 100; ++i) s.run(train);
  const double closed_form = 3.0 - 3.0 * std::pow(0.8, 100);
  EXPECT_NEAR(v.value().item(), closed_form, 1e-12);
  EXPECT_LT(std::fabs(v.value().item() - 3.0), 1e-6);
  EXPECT_EQ(g.global_step(), 100);
}

TEST(Optimizers, AdagradMatchesHandRule) {
  Graph g;
  auto v = g.get_variable("v", {2}, init::from_tensor(Tensor::vector({1.0, -1.0})));
  auto acc = g.get_variable("acc", {2}, init::zeros(), std::nullopt, false);
  apply_adagrad(std::vector{v}, {{"v", Tensor::vector({2.0, 0.5})}}, 0.1, std::vector{acc});
  EXPECT_NEAR(v.value()[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(v.value()[1], -1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(acc.value(), Tensor::vector({4.0, 0.25}));
}

TEST(Optimizers, GlobalStepIncrementsOncePerTrainRun) {
  Graph g;
  auto v = g.get_variable("v", {}, init::constant(1.0));
  auto w = g.get_variable("w", {}, init::constant(1.0));
  Node loss = square(mul(v.node(), w.node()));
  Node train = minimize(loss, {{std::make_shared<SgdOptimizer>(0.01), {v}},
                               {std::make_shared<AdagradOptimizer>(0.01), {w}}});
  Session s(g);
  for (int i = 1; i <= 5; ++i) {
    s.run(train);
    EXPECT_EQ(g.global_step(), i);
  }
  EXPECT_TRUE(g.find_variable("w/Adagrad").has_value());
  EXPECT_FALSE(g.find_variable("v/Adagrad").has_value());
}

TEST(Optimizers, NanLossAbortsBeforeUpdate) {
  Graph g;
  auto v = g.get_variable("v", {}, init::constant(-1.0));
  Node loss = log(v.node());
  Node train = minimize(loss, std::make_shared<SgdOptimizer>(0.1));
  EXPECT_THROW(Session(g).run(train), NanLossError);
  EXPECT_DOUBLE_EQ(v.value().item(), -1.0);
  EXPECT_EQ(g.global_step(), 0);
}

std::vector<double> train_trajectory(uint64_t seed) {
  Graph g(seed);
  std::mt19937_64 rng(1);
  Node x = g.constant(testing::random_tensor({8, 3}, rng));
  auto w = g.get_variable("w", {3, 4});
  auto w2 = g.get_variable("w2", {4, 1});
  Node h = dropout(relu(matmul(x, w.node())), 0.25, true);
  Node loss = reduce_mean(square(matmul(h, w2.node())));
  Node train = minimize(loss, std::make_shared<SgdOptimizer>(0.05));
  Session s(g);
  std::vector<double> out;
  for (int i = 0; i < 20; ++i) {
    s.run(train);
    out.insert(out.end(), w.value().raw().begin(), w.value().raw().end());
  }
  return out;
}

TEST(Determinism, SameSeedSameTrajectory) {
  EXPECT_EQ(train_trajectory(42), train_trajectory(42));
  EXPECT_NE(train_trajectory(42), train_trajectory(43));
}

TEST(Execution, RepeatedRunWithoutMutationIsIdentical) {
  Graph g(3);
  auto w = g.get_variable("w", {4, 4});
  Node y = dropout(softmax(w.node()), 0.5, true);
  Session s(g);
  EXPECT_EQ(s.run(y), s.run(y));
}

TEST(Execution, UnfedPlaceholderIsExecutionError) {
  Graph g;
  Node p = g.placeholder({2});
  EXPECT_THROW(Session(g).run(p), ExecutionError);
}

}  // namespace
}  // namespace est
