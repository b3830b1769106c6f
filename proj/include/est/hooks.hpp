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

#include <chrono>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "est/graph.hpp"

namespace est {

// Loop state visible to hooks.
class RunContext {
 public:
  explicit RunContext(Graph& g) : graph_(&g) {}

  Graph& graph() const { return *graph_; }
  int64_t global_step() const { return graph_->global_step(); }
  std::optional<double> last_loss() const { return last_loss_; }
  void set_last_loss(double v) { last_loss_ = v; }

  // The loop exits after the current iteration's after_run callbacks.
  void request_stop() { stop_ = true; }
  bool stop_requested() const { return stop_; }

  // True when end() runs because the loop raised.
  bool aborted() const { return aborted_; }
  void set_aborted() { aborted_ = true; }

  // Set by the harness; empty when the loop cannot checkpoint.
  std::function<void()> save_checkpoint;
  // Step of the newest checkpoint on disk, kept current by the harness.
  std::optional<int64_t> last_checkpoint_step;
  std::filesystem::path model_dir;

 private:
  Graph* graph_;
  std::optional<double> last_loss_;
  bool stop_ = false;
  bool aborted_ = false;
};

// Callbacks around the training loop; all optional.
class SessionRunHook {
 public:
  virtual ~SessionRunHook() = default;
  virtual void begin() {}
  virtual void after_session_start(RunContext&) {}
  // Extra nodes to evaluate in the same execution as the loop body.
  virtual std::vector<Node> before_run(RunContext&) { return {}; }
  // `results` are the values of the nodes requested in before_run.
  virtual void after_run(RunContext&, const std::vector<Tensor>& /*results*/) {}
  virtual void end(RunContext&) {}
};

using HookPtr = std::shared_ptr<SessionRunHook>;

// One loop iteration in two parts. `next` prepares the next input and
// returns false when the input is exhausted; `run` evaluates the body's own
// fetches plus `extra`, writing the extra values to `extra_results`.
struct LoopBody {
  std::function<bool()> next;
  std::function<void(const std::vector<Node>& extra, std::vector<Tensor>& extra_results)> run;
};

// begin, after_session_start, then per iteration before_run (all hooks),
// body, after_run (all hooks); end after the last iteration. Input
// exhaustion is detected before before_run. A stop
// requested before the first iteration skips the loop. If anything raises,
// end() still runs on every hook (with ctx.aborted() set) and the first
// error propagates.
void run_loop_with_hooks(RunContext& ctx, std::span<const HookPtr> hooks,
                         const LoopBody& body);

// Appends (wall_time, step, name, value) rows to <model_dir>/scalar_logs.csv.
void append_scalar_log(const std::filesystem::path& model_dir, int64_t step,
                       const std::string& name, double value);

// Stops once global_step reaches `last_step`, or `num_steps` past the step
// seen at session start.
class StopAtStepHook final : public SessionRunHook {
 public:
  static std::shared_ptr<StopAtStepHook> at(int64_t last_step);
  static std::shared_ptr<StopAtStepHook> after(int64_t num_steps);

  void after_session_start(RunContext& ctx) override;
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override;

 private:
  StopAtStepHook(std::optional<int64_t> num_steps, std::optional<int64_t> last_step);
  std::optional<int64_t> num_steps_;
  std::optional<int64_t> last_step_;
};

// Requests a stop at the first iteration boundary at or past the deadline.
class TimeBasedStopHook final : public SessionRunHook {
 public:
  explicit TimeBasedStopHook(std::chrono::duration<double> duration);
  void begin() override;
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override;

 private:
  std::chrono::duration<double> duration_;
  std::chrono::steady_clock::time_point started_at_;
};

// Saves at every multiple of `every_n` steps and at the end of the loop
// (unless aborted or already saved at that step).
class CheckpointSaverHook final : public SessionRunHook {
 public:
  explicit CheckpointSaverHook(int64_t every_n);
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override;
  void end(RunContext& ctx) override;

 private:
  void save(RunContext& ctx);
  int64_t every_n_;
};

// Logs global steps/sec (and the last loss) to scalar_logs.csv every
// `every_n` steps and at the end of the loop.
class StepCounterHook final : public SessionRunHook {
 public:
  explicit StepCounterHook(int64_t every_n = 100);
  void after_session_start(RunContext& ctx) override;
  void after_run(RunContext& ctx, const std::vector<Tensor>&) override;
  void end(RunContext& ctx) override;

 private:
  void emit(RunContext& ctx);
  int64_t every_n_;
  int64_t last_step_ = 0;
  std::chrono::steady_clock::time_point last_time_;
};

// Prints the named tensors every `every_n` iterations.
class LoggingHook final : public SessionRunHook {
 public:
  LoggingHook(std::map<std::string, Node> tensors, int64_t every_n, std::ostream& out);
  std::vector<Node> before_run(RunContext& ctx) override;
  void after_run(RunContext& ctx, const std::vector<Tensor>& results) override;

 private:
  std::map<std::string, Node> tensors_;
  int64_t every_n_;
  std::ostream* out_;
  int64_t iter_ = 0;
};

}  // namespace est
