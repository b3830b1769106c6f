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

#include <fstream>
#include <sstream>
#include <thread>

#include "est/hooks.hpp"
#include "support/fixtures.hpp"

namespace est {
namespace {

using testing::TempDir;

class RecordingHook : public SessionRunHook {
 public:
  explicit RecordingHook(std::vector<std::string>* trace, std::string tag = "")
      : trace_(trace), tag_(std::move(tag)) {}
  void begin() override { trace_->push_back(tag_ + "begin"); }
  std::vector<Node> before_run(RunContext&) override {
    trace_->push_back(tag_ + "before");
    return {};
  }
  void after_run(RunContext&, const std::vector<Tensor>&) override {
    trace_->push_back(tag_ + "after");
  }
  void end(RunContext&) override { trace_->push_back(tag_ + "end"); }

 private:
  std::vector<std::string>* trace_;
  std::string tag_;
};

struct Counter {
  Graph g;
  Variable step = g.global_step_variable();
  RunContext ctx{g};
  int iterations = 0;
  int limit;

  explicit Counter(int limit) : limit(limit) {}
  LoopBody body() {
    return {[this] { return iterations < limit; },
            [this](const std::vector<Node>&, std::vector<Tensor>&) {
              ++iterations;
              step.assign(Tensor::scalar(static_cast<double>(iterations)));
            }};
  }
};

TEST(RunLoop, CallbackOrder) {
  std::vector<std::string> trace;
  Counter c(3);
  std::vector<HookPtr> hooks{std::make_shared<RecordingHook>(&trace)};
  run_loop_with_hooks(c.ctx, hooks, c.body());
  EXPECT_EQ(trace, (std::vector<std::string>{"begin", "before", "after", "before", "after",
                                             "before", "after", "end"}));
}

TEST(RunLoop, HooksRunInRegistrationOrder) {
  std::vector<std::string> trace;
  Counter c(1);
  std::vector<HookPtr> hooks{std::make_shared<RecordingHook>(&trace, "a:"),
                             std::make_shared<RecordingHook>(&trace, "b:")};
  run_loop_with_hooks(c.ctx, hooks, c.body());
  EXPECT_EQ(trace, (std::vector<std::string>{"a:begin", "b:begin", "a:before", "b:before",
                                             "a:after", "b:after", "a:end", "b:end"}));
}

class StopAfterFirst : public SessionRunHook {
 public:
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override { ctx.request_stop(); }
};

TEST(RunLoop, StopInAfterRunEndsAfterOneIteration) {
  Counter c(100);
  std::vector<HookPtr> hooks{std::make_shared<StopAfterFirst>()};
  run_loop_with_hooks(c.ctx, hooks, c.body());
  EXPECT_EQ(c.iterations, 1);
}

class Thrower : public SessionRunHook {
 public:
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override {
    if (ctx.global_step() == 2) throw Error("boom");
  }
};

TEST(RunLoop, RaisingHookStillRunsEndOnAll) {
  std::vector<std::string> trace;
  Counter c(10);
  std::vector<HookPtr> hooks{std::make_shared<RecordingHook>(&trace),
                             std::make_shared<Thrower>()};
  EXPECT_THROW(run_loop_with_hooks(c.ctx, hooks, c.body()), Error);
  EXPECT_EQ(c.iterations, 2);
  EXPECT_EQ(trace.back(), "end");
  EXPECT_TRUE(c.ctx.aborted());
}

class LossFetcher : public SessionRunHook {
 public:
  explicit LossFetcher(Node loss) : loss_(loss) {}
  std::vector<Node> before_run(RunContext&) override { return {loss_}; }
  void after_run(RunContext& ctx, const std::vector<Tensor>& results) override {
    ASSERT_EQ(results.size(), 1u);
    seen.push_back(results[0].item());
    loop.push_back(*ctx.last_loss());
  }
  std::vector<double> seen, loop;

 private:
  Node loss_;
};

// model_fn that records its loss node so a hook can request it.
ModelFn capturing_model_fn(std::shared_ptr<std::vector<HookPtr>> hooks_out,
                           std::shared_ptr<LossFetcher>* fetcher) {
  auto inner = testing::mlp_model_fn();
  return [=](const FeatureInputs& f, const LabelInputs& l, Mode mode, const nlohmann::json& p) {
    EstimatorSpec spec = inner(f, l, mode, p);
    if (mode == Mode::kTrain) {
      *fetcher = std::make_shared<LossFetcher>(*spec.loss);
      hooks_out->push_back(*fetcher);
    }
    return spec;
  };
}

// Forwards to a hook that is created later, inside model_fn.
class Deferred : public SessionRunHook {
 public:
  explicit Deferred(std::shared_ptr<std::vector<HookPtr>> inner) : inner_(std::move(inner)) {}
  void begin() override {
    for (auto& h : *inner_) h->begin();
  }
  std::vector<Node> before_run(RunContext& ctx) override {
    std::vector<Node> out;
    for (auto& h : *inner_) {
      auto r = h->before_run(ctx);
      out.insert(out.end(), r.begin(), r.end());
    }
    return out;
  }
  void after_run(RunContext& ctx, const std::vector<Tensor>& r) override {
    for (auto& h : *inner_) h->after_run(ctx, r);
  }

 private:
  std::shared_ptr<std::vector<HookPtr>> inner_;
};

TEST(RunLoop, ExtraFetchSeesTheLoopLoss) {
  TempDir dir;
  auto created = std::make_shared<std::vector<HookPtr>>();
  std::shared_ptr<LossFetcher> fetcher;
  RunConfig cfg{.model_dir = dir.path()};
  Estimator est(capturing_model_fn(created, &fetcher), cfg);
  auto [f, l] = testing::blob_data(64, 4, 1);
  est.train(make_input_fn(f, l, {.batch_size = 16, .num_epochs = 0}),
            TrainArgs{.steps = 5, .hooks = {std::make_shared<Deferred>(created)}});
  ASSERT_TRUE(fetcher);
  ASSERT_EQ(fetcher->seen.size(), 5u);
  EXPECT_EQ(fetcher->seen, fetcher->loop);
}

InputFn forever(uint64_t seed = 1) {
  auto [f, l] = testing::blob_data(64, 4, seed);
  return make_input_fn(f, l, {.batch_size = 8, .num_epochs = 0});
}

TEST(BuiltinHooks, TimeBasedStopZeroRunsExactlyOneStep) {
  TempDir dir;
  Estimator est(testing::mlp_model_fn(), RunConfig{.model_dir = dir.path()});
  const int64_t step = est.train(
      forever(),
      TrainArgs{.hooks = {std::make_shared<TimeBasedStopHook>(std::chrono::seconds(0))}});
  EXPECT_EQ(step, 1);
}

TEST(BuiltinHooks, TimeBasedStopNeverStopsEarly) {
  TempDir dir;
  Estimator est(testing::mlp_model_fn(), RunConfig{.model_dir = dir.path()});
  const auto t0 = std::chrono::steady_clock::now();
  est.train(forever(), TrainArgs{.hooks = {std::make_shared<TimeBasedStopHook>(
                                     std::chrono::milliseconds(200))}});
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(200));
}

TEST(BuiltinHooks, StopAtStepIsExact) {
  TempDir dir;
  Estimator est(testing::mlp_model_fn(), RunConfig{.model_dir = dir.path()});
  EXPECT_EQ(est.train(forever(), TrainArgs{.hooks = {StopAtStepHook::at(7)}}), 7);
  EXPECT_EQ(est.train(forever(), TrainArgs{.hooks = {StopAtStepHook::after(5)}}), 12);
}

TEST(BuiltinHooks, CheckpointSaverStepsAreMultiplesPlusFinal) {
  TempDir dir;
  RunConfig cfg{.model_dir = dir.path(), .save_checkpoints_steps = 4, .keep_checkpoint_max = 0};
  Estimator est(testing::mlp_model_fn(), cfg);
  est.train(forever(), 10);
  EXPECT_EQ(CheckpointManager::all_retained(dir.path()),
            (std::vector<std::string>{"model.ckpt-4", "model.ckpt-8", "model.ckpt-10"}));
}

TEST(BuiltinHooks, StepCounterWritesCsv) {
  TempDir dir;
  Estimator est(testing::mlp_model_fn(), RunConfig{.model_dir = dir.path()});
  est.train(forever(), 100);
  std::ifstream in(dir / "scalar_logs.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "wall_time,step,name,value");
  int rate_rows = 0;
  for (std::string line; std::getline(in, line);) {
    std::stringstream ss(line);
    std::string wall, step, name, value;
    std::getline(ss, wall, ',');
    std::getline(ss, step, ',');
    std::getline(ss, name, ',');
    std::getline(ss, value, ',');
    if (name == "global_step/sec") {
      ++rate_rows;
      EXPECT_GT(std::stod(value), 0.0);
    }
  }
  EXPECT_GE(rate_rows, 1);
}

TEST(BuiltinHooks, LoggingHookPrints) {
  Graph g;
  Node c = g.constant(Tensor::scalar(2.5));
  std::ostringstream out;
  Counter counter(4);
  auto hook = std::make_shared<LoggingHook>(std::map<std::string, Node>{{"c", c}}, 2, out);
  std::vector<HookPtr> hooks{hook};
  Session s(g);
  LoopBody body = counter.body();
  auto inner = body.run;
  body.run = [&](const std::vector<Node>& extra, std::vector<Tensor>& results) {
    inner(extra, results);
    if (!extra.empty()) results = s.run(extra);
  };
  run_loop_with_hooks(counter.ctx, hooks, body);
  EXPECT_EQ(out.str(), "step 1: c = 2.5\nstep 3: c = 2.5\n");
}

TEST(BuiltinHooks, Validation) {
  EXPECT_THROW(TimeBasedStopHook(std::chrono::seconds(-1)), ConfigError);
  EXPECT_THROW(CheckpointSaverHook(0), ConfigError);
  EXPECT_THROW(StopAtStepHook::after(-1), ConfigError);
}

class Observer : public SessionRunHook {
 public:
  std::vector<Node> before_run(RunContext& ctx) override {
    return {ctx.graph().trainable_variables().front().node()};
  }
  void after_run(RunContext&, const std::vector<Tensor>& r) override { sum += r[0][0]; }
  double sum = 0;
};

TEST(BuiltinHooks, ObservingHooksDoNotChangeTheModel) {
  TempDir a, b;
  Estimator plain(testing::mlp_model_fn(), RunConfig{.model_dir = a.path(), .seed = 3});
  Estimator hooked(testing::mlp_model_fn(), RunConfig{.model_dir = b.path(), .seed = 3});
  std::ostringstream sink;
  plain.train(forever(), 30);
  auto obs = std::make_shared<Observer>();
  hooked.train(forever(), TrainArgs{.steps = 30, .hooks = {obs, std::make_shared<TimeBasedStopHook>(
                                                                    std::chrono::hours(1))}});
  const Checkpoint ca = restore_checkpoint(*plain.latest_checkpoint());
  const Checkpoint cb = restore_checkpoint(*hooked.latest_checkpoint());
  EXPECT_EQ(encode_checkpoint(ca), encode_checkpoint(cb));
  EXPECT_NE(obs->sum, 0.0);
}

}  // namespace
}  // namespace est
