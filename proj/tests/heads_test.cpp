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

#include "est/heads.hpp"
#include "est/ops.hpp"
#include "est/optimizer.hpp"

namespace est {
namespace {

Feed make_feed(const Features& f, const Labels& l) {
  Feed feed;
  feed.features = &f;
  feed.labels = &l;
  return feed;
}

TrainOpFn sgd(double lr = 0.1) {
  return [lr](Node loss) { return minimize(loss, make_optimizer("sgd", lr)); };
}

TEST(MultiClassHead, ZeroLogitsGiveLogN) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  Node logits = fi.numeric("z", 10);
  auto head = multi_class_head(10);
  EstimatorSpec spec = create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(logits), li);
  Features f;
  f.tensors["z"] = Tensor(Shape{3, 10});
  Labels l{{"label", Tensor::vector({0, 4, 9})}};
  Session s(g);
  const auto out = s.run(std::vector<Node>{*spec.loss, spec.predictions.at("probabilities")},
                         make_feed(f, l));
  EXPECT_NEAR(out[0].item(), std::log(10.0), 1e-12);
  for (double p : out[1].values()) EXPECT_NEAR(p, 0.1, 1e-15);
}

TEST(MultiClassHead, HiddenLayerGetsOwnLogitsLayer) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, false);
  Node h = fi.numeric("h", 50);
  auto head = multi_class_head(10);
  EstimatorSpec spec =
      create_estimator_spec(*head, fi, Mode::kPredict, HeadInput::last_layer(h), li);
  auto kernel = g.find_variable("head/logits/kernel");
  ASSERT_TRUE(kernel);
  EXPECT_EQ(kernel->shape(), (Shape{50, 10}));
  ASSERT_TRUE(g.find_variable("head/logits/bias"));
  Features f;
  Tensor x(Shape{4, 50});
  for (size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<double>(i));
  f.tensors["h"] = x;
  Feed feed;
  feed.features = &f;
  Session s(g);
  const auto out = s.run(
      std::vector<Node>{spec.predictions.at("probabilities"), spec.predictions.at("class_id")},
      feed);
  ASSERT_EQ(out[0].shape(), (Shape{4, 10}));
  for (int64_t r = 0; r < 4; ++r) {
    double sum = 0;
    int best = 0;
    for (int64_t c = 0; c < 10; ++c) {
      sum += out[0].at(r, c);
      if (out[0].at(r, c) > out[0].at(r, best)) best = static_cast<int>(c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(out[1][static_cast<size_t>(r)], best);
  }
}

TEST(MultiClassHead, LabelOutOfRangeFails) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = multi_class_head(3);
  EstimatorSpec spec =
      create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(fi.numeric("z", 3)), li);
  Features f;
  f.tensors["z"] = Tensor(Shape{1, 3});
  Labels l{{"label", Tensor::vector({3})}};
  EXPECT_THROW(Session(g).run(*spec.loss, make_feed(f, l)), Error);
}

TEST(MultiClassHead, RejectsFewerThanTwoClasses) {
  EXPECT_THROW(multi_class_head(1), ConfigError);
}

TEST(Heads, ModeFieldContractForEveryVariant) {
  const std::vector<HeadPtr> heads = {
      multi_class_head(3), binary_classification_head(), regression_head(2),
      multi_head({multi_class_head(2, "y", "h1"), regression_head(1, "z", "h2")}, {1.0, 0.5})};
  for (const auto& head : heads) {
    for (Mode mode : {Mode::kTrain, Mode::kEval, Mode::kPredict}) {
      Graph g;
      FeatureInputs fi(g);
      LabelInputs li(g, mode != Mode::kPredict);
      Node h = fi.numeric("x", 4);
      EstimatorSpec spec =
          create_estimator_spec(*head, fi, mode, HeadInput::last_layer(h), li, sgd());
      EXPECT_EQ(spec.mode, mode);
      EXPECT_FALSE(spec.predictions.empty());
      EXPECT_EQ(spec.loss.has_value(), mode != Mode::kPredict);
      EXPECT_EQ(spec.train_op.has_value(), mode == Mode::kTrain);
      EXPECT_EQ(!spec.eval_metrics.empty(), mode == Mode::kEval);
      EXPECT_EQ(spec.export_outputs.size(), spec.predictions.size());
    }
  }
}

TEST(Heads, TrainWithoutTrainOpFnOrLabelsFails) {
  Graph g;
  FeatureInputs fi(g);
  auto head = regression_head();
  Node x = fi.numeric("x", 1);
  EXPECT_THROW(create_estimator_spec(*head, fi, Mode::kTrain, HeadInput::logits(x),
                                     LabelInputs(g, true)),
               GraphError);
  EXPECT_THROW(create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(x),
                                     LabelInputs(g, false)),
               GraphError);
}

TEST(Heads, LogitsWidthIsChecked) {
  Graph g;
  FeatureInputs fi(g);
  auto head = multi_class_head(4);
  EXPECT_THROW(create_estimator_spec(*head, fi, Mode::kPredict,
                                     HeadInput::logits(fi.numeric("x", 3)), LabelInputs(g, false)),
               GraphError);
}

TEST(BinaryHead, ProbabilitiesAreComplementary) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = binary_classification_head();
  EstimatorSpec spec =
      create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(fi.numeric("z", 1)), li);
  Features f;
  f.tensors["z"] = Tensor::matrix({{0.0}, {2.0}, {-1.0}});
  Labels l{{"label", Tensor::vector({1, 1, 0})}};
  const auto out = Session(g).run(
      std::vector<Node>{spec.predictions.at("probabilities"), spec.predictions.at("class_id"),
                        *spec.loss},
      make_feed(f, l));
  for (int64_t r = 0; r < 3; ++r) {
    const double p = 1.0 / (1.0 + std::exp(-f.tensors["z"][static_cast<size_t>(r)]));
    EXPECT_NEAR(out[0].at(r, 1), p, 1e-15);
    EXPECT_NEAR(out[0].at(r, 0) + out[0].at(r, 1), 1.0, 1e-12);
  }
  EXPECT_EQ(out[1], Tensor::vector({0, 1, 0}));
  const double expected =
      (std::log(2.0) + std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.0))) / 3;
  EXPECT_NEAR(out[2].item(), expected, 1e-12);
}

TEST(RegressionHead, WeightColumnWeightsLoss) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = regression_head(1, "label", "head", "w");
  EstimatorSpec spec =
      create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(fi.numeric("p", 1)), li);
  Features f;
  f.tensors["p"] = Tensor::matrix({{1.0}, {3.0}});
  f.tensors["w"] = Tensor::vector({3.0, 1.0});
  Labels l{{"label", Tensor::vector({0.0, 0.0})}};
  EXPECT_NEAR(Session(g).run(*spec.loss, make_feed(f, l)).item(), (3 * 1 + 1 * 9) / 4.0, 1e-12);
}

TEST(RegressionHead, AllZeroWeightsGiveZeroLoss) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = regression_head(1, "label", "head", "w");
  EstimatorSpec spec =
      create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(fi.numeric("p", 1)), li);
  Features f;
  f.tensors["p"] = Tensor::matrix({{1.0}, {3.0}});
  f.tensors["w"] = Tensor::vector({0.0, 0.0});
  Labels l{{"label", Tensor::vector({0.0, 0.0})}};
  EXPECT_EQ(Session(g).run(*spec.loss, make_feed(f, l)).item(), 0.0);
}

TEST(MultiHead, TotalIsWeightedSumOfChildLosses) {
  for (auto weights : {std::vector<double>{1, 1}, std::vector<double>{2, 0}}) {
    Graph g;
    FeatureInputs fi(g);
    LabelInputs li(g, true);
    auto head = multi_head({regression_head(2, "y", "h1"), regression_head(2, "z", "h2")}, weights);
    Node logits = fi.numeric("logits", 4);
    EstimatorSpec spec =
        create_estimator_spec(*head, fi, Mode::kEval, HeadInput::logits(logits), li);
    Features f;
    // h1 mse = mean(1, 0) = 0.5, h2 mse = mean(0.25, 0.25) = 0.25.
    f.tensors["logits"] = Tensor::matrix({{1.0, 0.0, 0.5, -0.5}});
    Labels l{{"y", Tensor::matrix({{0.0, 0.0}})}, {"z", Tensor::matrix({{0.0, 0.0}})}};
    const double total = Session(g).run(*spec.loss, make_feed(f, l)).item();
    EXPECT_EQ(total, weights[0] * 0.5 + weights[1] * 0.25);
    EXPECT_TRUE(spec.predictions.count("h1/value"));
    EXPECT_TRUE(spec.predictions.count("h2/value"));
    EXPECT_TRUE(spec.eval_metrics.count("h1/average_loss"));
  }
}

TEST(MultiHead, ZeroWeightHeadGetsNoGradient) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = multi_head({regression_head(1, "y", "h1"), regression_head(1, "z", "h2")}, {2, 0});
  Node x = fi.numeric("x", 3);
  EstimatorSpec spec = create_estimator_spec(*head, fi, Mode::kEval, HeadInput::last_layer(x), li);
  Features f;
  f.tensors["x"] = Tensor::matrix({{1, 2, 3}, {-1, 0.5, 2}});
  Labels l{{"y", Tensor::vector({1, 2})}, {"z", Tensor::vector({3, 4})}};
  const auto vars = g.trainable_variables();
  const auto grads = gradients(*spec.loss, vars, make_feed(f, l));
  for (const auto& [name, t] : grads) {
    if (name.rfind("h2/", 0) == 0) {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
    }
  }
  EXPECT_TRUE(g.find_variable("h1/logits/kernel"));
  EXPECT_TRUE(g.find_variable("h2/logits/kernel"));
}

TEST(MultiHead, TwoObjectiveClassifierExposesBothAccuracies) {
  Graph g;
  FeatureInputs fi(g);
  LabelInputs li(g, true);
  auto head = multi_head({multi_class_head(2, "y", "h1"), multi_class_head(10, "z", "h2")});
  Node h = layers::dense(fi.numeric("x", 5), 16, activation_by_name("relu"));
  EstimatorSpec spec = create_estimator_spec(*head, fi, Mode::kEval, HeadInput::last_layer(h), li);
  EXPECT_TRUE(spec.eval_metrics.count("h1/accuracy"));
  EXPECT_TRUE(spec.eval_metrics.count("h2/accuracy"));
  EXPECT_EQ(spec.export_outputs.at("h2/probabilities"), (Shape{10}));
}

TEST(MultiHead, Validation) {
  EXPECT_THROW(multi_head({regression_head(1, "y", "a"), regression_head(1, "z", "a")}),
               ConfigError);
  EXPECT_THROW(multi_head({regression_head(1, "y", "a")}, {1, 2}), ConfigError);
  EXPECT_THROW(multi_head({}), ConfigError);
}

TEST(HeadJson, RoundTrip) {
  auto head = multi_head({multi_class_head(2, "y", "h1"), regression_head(3, "z", "h2", "w")},
                         {1.0, 0.5});
  auto back = head_from_json(head->to_json());
  EXPECT_EQ(back->to_json(), head->to_json());
  EXPECT_EQ(back->logits_dimension(), 5);
  EXPECT_THROW(head_from_json({{"type", "ranking"}}), ConfigError);
}

}  // namespace
}  // namespace est
