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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "est/estimator.hpp"
#include "est/optimizer.hpp"

namespace est {

// Round-robin shard index per variable, in the given (creation) order.
std::vector<int> assign_variables(const std::vector<std::string>& names, int num_ps);

// One parameter server: a name -> value store with one lock per variable.
// Optimizer slots live next to their variable and share its lock.
class ParameterServerShard {
 public:
  explicit ParameterServerShard(int index) : index_(index) {}
  ParameterServerShard(const ParameterServerShard&) = delete;
  ParameterServerShard& operator=(const ParameterServerShard&) = delete;

  int index() const { return index_; }

  // Creates or overwrites a variable.
  void put(const std::string& name, Tensor value);
  // Creates or overwrites slot `slot_name` ("<var>/<slot>") of `var`.
  void put_slot(const std::string& var, const std::string& slot_name, Tensor value);
  bool contains(const std::string& name) const;
  Tensor read(const std::string& name) const;
  // Slot value by its full name.
  Tensor read_slot(const std::string& var, const std::string& slot_name) const;
  // value += delta, atomically.
  void add(const std::string& name, const Tensor& delta);
  // Optimizer update, atomic for this variable and its slots.
  void apply(const std::string& name, const Tensor& grad, const Optimizer& optimizer);
  std::vector<std::string> names() const;

  // Blocks until shutdown() is called.
  void serve_until_shutdown();
  void shutdown();

 private:
  struct Entry {
    mutable std::mutex mu;
    Tensor value;
    std::map<std::string, Tensor> slots;
  };
  Entry& entry(const std::string& name) const;

  int index_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::unique_ptr<Entry>> vars_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopped_ = false;
};

// In-process cluster state shared by all tasks: shards, variable
// placement, the global step (owned by shard 0) and lifecycle signals.
class Cluster {
 public:
  explicit Cluster(int num_ps);

  int num_ps() const { return static_cast<int>(shards_.size()); }
  ParameterServerShard& shard(int i) { return *shards_.at(static_cast<size_t>(i)); }

  // Applied training steps.
  int64_t global_step() const { return global_step_.load(); }
  // Reserves one step if fewer than `limit` are reserved; returns the
  // number of reservations before this one.
  std::optional<int64_t> claim_step(int64_t limit);
  // Gives back a reservation that will not be used.
  void release_step();
  void step_applied() { ++global_step_; }

  // True the first time it is called with `id`.
  bool fire_once(size_t id);

  // Set once by the leader after pushing initial values.
  void initialize(std::map<std::string, int> placement, int64_t global_step);
  bool initialized() const;
  // Waits for initialize(); false when stopped first.
  bool wait_initialized();
  int shard_of(const std::string& variable) const;

  void worker_started();
  void worker_finished();
  // Waits until at most `remaining` workers are running; false when stopped.
  bool wait_workers_at_most(int remaining);

  // Training finished and the final checkpoint is on disk.
  void mark_training_done();
  bool training_done() const { return training_done_.load(); }

  // Asks every task to stop as soon as possible.
  void request_stop();
  bool stop_requested() const { return stop_.load(); }

  // Stops the parameter servers.
  void shutdown();

 private:
  std::vector<std::unique_ptr<ParameterServerShard>> shards_;
  std::atomic<int64_t> global_step_{0};
  std::atomic<int64_t> claimed_{0};
  std::map<std::string, int> placement_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::set<size_t> fired_;
  bool initialized_ = false;
  int active_workers_ = 0;
  std::atomic<bool> training_done_{false};
  std::atomic<bool> stop_{false};
};

// Makes worker `worker` fail once global_step reaches `at_step`; with
// `restart` it rejoins and resumes from the current shard values.
struct FailureInjection {
  int worker = 0;
  int64_t at_step = 0;
  bool restart = false;
};

struct Experiment {
  std::shared_ptr<Estimator> estimator;
  InputFn train_input_fn;
  InputFn eval_input_fn;
  int64_t train_steps = 0;
  std::chrono::milliseconds eval_poll_interval{100};
  // Wall-time limit on training; workers stop claiming steps after it.
  std::optional<std::chrono::duration<double>> max_train_time;
  // Checkpoints carry "checksum/params_sum", the sum of every other saved
  // value in save order, which the evaluator verifies after loading.
  bool checksum_variable = false;
  std::vector<FailureInjection> failures;

  void validate() const;
};

struct ClusterSpec {
  int num_ps = 1;
  int num_workers = 1;
  bool evaluator = true;
};

struct EvaluatorStats {
  std::vector<int64_t> evaluated_steps;
  std::map<std::string, double> last_metrics;
  int skipped_corrupt = 0;
  int checksum_mismatches = 0;
};

struct ExperimentResult {
  std::map<std::string, double> final_metrics;
  int64_t global_step = 0;
  double train_seconds = 0.0;
  EvaluatorStats evaluator;
};

// Between-graph replicated asynchronous training of one worker. Worker 0
// is the leader: it places and initializes the variables (from the latest
// checkpoint when present) and is the only checkpoint writer.
void run_worker(int index, Experiment& experiment, Cluster& cluster);

// Evaluates each new checkpoint until the cluster reports training done,
// then evaluates the final checkpoint once more if it is new.
EvaluatorStats run_evaluator(Experiment& experiment, Cluster& cluster);

// Runs ps shards, workers and (optionally) the evaluator as threads and
// returns the metrics of the final checkpoint. The first worker error is
// rethrown after all tasks have stopped.
ExperimentResult train_and_evaluate(Experiment& experiment, const ClusterSpec& spec);

// Parses ESTIMATOR_RUN_CONFIG. Throws ConfigError when it is unset or
// malformed.
RunConfig run_config_from_env();

// Runs the role of `config.task` against `cluster`: a ps task serves until
// shutdown, a worker trains, an evaluator evaluates, and a local task runs
// train_and_evaluate with one worker. Returns the role that ran.
TaskType run_task(const RunConfig& config, Experiment& experiment, Cluster& cluster);

struct ScalingRow {
  int workers = 0;
  double steps_per_sec = 0.0;
  double speedup_vs_1 = 0.0;
};

// Trains a fresh experiment from `make(model_dir)` for `budget` of wall time
// per worker count and reports global steps/sec. The first count is the
// speedup baseline.
std::vector<ScalingRow> run_scaling_benchmark(
    const std::function<Experiment(const std::filesystem::path& model_dir)>& make,
    const std::vector<int>& worker_counts, std::chrono::duration<double> budget,
    const std::filesystem::path& scratch_dir, int num_ps = 1);

}  // namespace est
