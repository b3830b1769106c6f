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

#include "est/experiment.hpp"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <thread>

namespace est {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kChecksumName = "checksum/params_sum";

struct InjectedFailure {};

double sum_values(const Checkpoint& ckpt) {
  double s = 0.0;
  for (const auto& [name, t] : ckpt.variables) {
    if (name == kChecksumName) continue;
    for (double v : t.values()) s += v;
  }
  return s;
}

// Leader's snapshot of shard state in the graph's variable order.
Checkpoint snapshot_from_shards(Graph& g, Cluster& cluster, bool with_checksum) {
  Checkpoint c;
  c.global_step = cluster.global_step();
  for (const Variable& v : g.variables()) {
    if (v.index() == g.global_step_variable().index()) continue;
    const VariableDef& def = g.variable_def(v.index());
    if (!def.slot_of.empty()) {
      c.variables.emplace_back(
          def.name, cluster.shard(cluster.shard_of(def.slot_of)).read_slot(def.slot_of, def.name));
    } else {
      c.variables.emplace_back(def.name, cluster.shard(cluster.shard_of(def.name)).read(def.name));
    }
  }
  if (with_checksum) c.variables.emplace_back(kChecksumName, Tensor::scalar(sum_values(c)));
  return c;
}

struct WorkerGraph {
  std::unique_ptr<Graph> graph;
  EstimatorSpec spec;
};

WorkerGraph build_train_graph(const Estimator& est) {
  WorkerGraph w;
  w.graph = std::make_unique<Graph>(est.config().seed);
  FeatureInputs features(*w.graph);
  LabelInputs labels(*w.graph, true);
  w.spec = est.model_fn()(features, labels, Mode::kTrain, est.params());
  w.spec.validate();
  return w;
}

}  // namespace

std::vector<int> assign_variables(const std::vector<std::string>& names, int num_ps) {
  if (num_ps < 1) throw ConfigError("num_ps must be >= 1");
  std::vector<int> out(names.size());
  for (size_t i = 0; i < names.size(); ++i) out[i] = static_cast<int>(i % static_cast<size_t>(num_ps));
  return out;
}

ParameterServerShard::Entry& ParameterServerShard::entry(const std::string& name) const {
  std::shared_lock lock(map_mu_);
  auto it = vars_.find(name);
  if (it == vars_.end()) {
    throw ExecutionError("ps shard " + std::to_string(index_) + ": no variable '" + name + "'");
  }
  return *it->second;
}

void ParameterServerShard::put(const std::string& name, Tensor value) {
  {
    std::shared_lock lock(map_mu_);
    if (auto it = vars_.find(name); it != vars_.end()) {
      std::lock_guard<std::mutex> g(it->second->mu);
      it->second->value = std::move(value);
      return;
    }
  }
  std::unique_lock lock(map_mu_);
  auto& e = vars_[name];
  if (!e) e = std::make_unique<Entry>();
  std::lock_guard<std::mutex> g(e->mu);
  e->value = std::move(value);
}

void ParameterServerShard::put_slot(const std::string& var, const std::string& slot_name,
                                    Tensor value) {
  Entry& e = entry(var);
  std::lock_guard<std::mutex> g(e.mu);
  e.slots[slot_name] = std::move(value);
}

bool ParameterServerShard::contains(const std::string& name) const {
  std::shared_lock lock(map_mu_);
  return vars_.count(name) > 0;
}

Tensor ParameterServerShard::read(const std::string& name) const {
  Entry& e = entry(name);
  std::lock_guard<std::mutex> g(e.mu);
  return e.value;
}

Tensor ParameterServerShard::read_slot(const std::string& var, const std::string& slot_name) const {
  Entry& e = entry(var);
  std::lock_guard<std::mutex> g(e.mu);
  auto it = e.slots.find(slot_name);
  // Slots are created on first update, zero-valued like the graph's.
  return it == e.slots.end() ? Tensor(e.value.shape()) : it->second;
}

void ParameterServerShard::add(const std::string& name, const Tensor& delta) {
  Entry& e = entry(name);
  std::lock_guard<std::mutex> g(e.mu);
  if (delta.shape() != e.value.shape()) {
    throw ExecutionError("ps add '" + name + "': shape " + delta.shape().to_string() + " vs " +
                         e.value.shape().to_string());
  }
  for (size_t i = 0; i < e.value.size(); ++i) e.value[i] += delta[i];
}

void ParameterServerShard::apply(const std::string& name, const Tensor& grad,
                                 const Optimizer& optimizer) {
  Entry& e = entry(name);
  std::lock_guard<std::mutex> g(e.mu);
  if (grad.shape() != e.value.shape()) {
    throw ExecutionError("ps apply '" + name + "': gradient shape " + grad.shape().to_string() +
                         " vs " + e.value.shape().to_string());
  }
  apply_with_slots(optimizer, name, e.value, grad, e.slots);
}

std::vector<std::string> ParameterServerShard::names() const {
  std::shared_lock lock(map_mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : vars_) out.push_back(k);
  return out;
}

void ParameterServerShard::serve_until_shutdown() {
  std::unique_lock lock(stop_mu_);
  stop_cv_.wait(lock, [&] { return stopped_; });
}

void ParameterServerShard::shutdown() {
  {
    std::lock_guard lock(stop_mu_);
    stopped_ = true;
  }
  stop_cv_.notify_all();
}

Cluster::Cluster(int num_ps) {
  if (num_ps < 1) throw ConfigError("cluster: num_ps must be >= 1");
  for (int i = 0; i < num_ps; ++i) shards_.push_back(std::make_unique<ParameterServerShard>(i));
}

std::optional<int64_t> Cluster::claim_step(int64_t limit) {
  int64_t cur = claimed_.load();
  while (cur < limit) {
    if (claimed_.compare_exchange_weak(cur, cur + 1)) return cur;
  }
  return std::nullopt;
}

void Cluster::release_step() { --claimed_; }

bool Cluster::fire_once(size_t id) {
  std::lock_guard lock(mu_);
  return fired_.insert(id).second;
}

void Cluster::initialize(std::map<std::string, int> placement, int64_t global_step) {
  {
    std::lock_guard lock(mu_);
    placement_ = std::move(placement);
    global_step_ = global_step;
    claimed_ = global_step;
    initialized_ = true;
  }
  cv_.notify_all();
}

bool Cluster::initialized() const {
  std::lock_guard lock(mu_);
  return initialized_;
}

bool Cluster::wait_initialized() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return initialized_ || stop_.load(); });
  return initialized_;
}

int Cluster::shard_of(const std::string& variable) const {
  std::lock_guard lock(mu_);
  auto it = placement_.find(variable);
  if (it == placement_.end()) throw ExecutionError("no placement for variable '" + variable + "'");
  return it->second;
}

void Cluster::worker_started() {
  std::lock_guard lock(mu_);
  ++active_workers_;
}

void Cluster::worker_finished() {
  {
    std::lock_guard lock(mu_);
    --active_workers_;
  }
  cv_.notify_all();
}

bool Cluster::wait_workers_at_most(int remaining) {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return active_workers_ <= remaining || stop_.load(); });
  return active_workers_ <= remaining;
}

void Cluster::mark_training_done() {
  training_done_ = true;
  cv_.notify_all();
}

void Cluster::request_stop() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
}

void Cluster::shutdown() {
  for (auto& s : shards_) s->shutdown();
}

void Experiment::validate() const {
  if (!estimator) throw ConfigError("experiment: estimator is required");
  if (!train_input_fn) throw ConfigError("experiment: train_input_fn is required");
  if (!eval_input_fn) throw ConfigError("experiment: eval_input_fn is required");
  if (train_steps < 0) throw ConfigError("experiment: train_steps must be >= 0");
  for (const auto& f : failures) {
    if (f.worker == 0 && !f.restart) {
      throw ConfigError("experiment: the leader (worker 0) may only fail with restart");
    }
  }
}

void run_worker(int index, Experiment& experiment, Cluster& cluster) {
  const Estimator& est = *experiment.estimator;
  const RunConfig& cfg = est.config();
  WorkerGraph w = build_train_graph(est);
  Graph& g = *w.graph;
  const bool leader = index == 0;

  std::vector<Variable> primaries;
  for (const Variable& v : g.variables()) {
    if (v.index() == g.global_step_variable().index()) continue;
    if (!g.variable_def(v.index()).slot_of.empty()) continue;
    primaries.push_back(v);
  }

  std::optional<CheckpointManager> manager;
  int64_t last_saved = -1;
  if (leader) {
    manager.emplace(cfg.model_dir, cfg.keep_checkpoint_max, cfg.writer_id());
    if (!cluster.initialized()) {
      if (auto latest = CheckpointManager::latest(cfg.model_dir)) {
        const Checkpoint ckpt = restore_checkpoint(*latest);
        load_into(g, ckpt);
        last_saved = ckpt.global_step;
      }
      std::vector<std::string> names;
      for (const Variable& v : primaries) names.push_back(v.name());
      const std::vector<int> shards = assign_variables(names, cluster.num_ps());
      std::map<std::string, int> placement;
      for (size_t i = 0; i < primaries.size(); ++i) {
        placement[names[i]] = shards[i];
        cluster.shard(shards[i]).put(names[i], primaries[i].value());
      }
      for (const Variable& v : g.variables()) {
        const VariableDef& def = g.variable_def(v.index());
        if (def.slot_of.empty()) continue;
        cluster.shard(placement.at(def.slot_of)).put_slot(def.slot_of, def.name, def.value);
      }
      cluster.initialize(std::move(placement), g.global_step());
    } else if (auto latest = CheckpointManager::latest(cfg.model_dir)) {
      last_saved = restore_checkpoint(*latest).global_step;
    }
  } else if (!cluster.wait_initialized()) {
    return;
  }

  auto save = [&] {
    Checkpoint c = snapshot_from_shards(g, cluster, experiment.checksum_variable);
    last_saved = c.global_step;
    manager->save(c);
  };

  const auto started = std::chrono::steady_clock::now();
  BatchIterator it = experiment.train_input_fn();
  Session session(g);
  const Node loss = *w.spec.loss;
  const Node train_op = *w.spec.train_op;
  const Node fetches[] = {loss, train_op};
  while (!cluster.stop_requested()) {
    for (size_t i = 0; i < experiment.failures.size(); ++i) {
      const FailureInjection& f = experiment.failures[i];
      if (f.worker != index || cluster.global_step() < f.at_step) continue;
      if (cluster.fire_once(i)) throw InjectedFailure{};
    }
    if (experiment.max_train_time &&
        std::chrono::steady_clock::now() - started >= *experiment.max_train_time) {
      break;
    }
    std::optional<Batch> batch = it();
    if (!batch) break;
    std::optional<int64_t> ticket = cluster.claim_step(experiment.train_steps);
    if (!ticket) break;
    for (const Variable& v : primaries) v.assign(cluster.shard(cluster.shard_of(v.name())).read(v.name()));
    g.global_step_variable().assign(Tensor::scalar(static_cast<double>(*ticket)));
    Feed feed;
    feed.features = &batch->features;
    feed.labels = &batch->labels;
    GradientSink sink;
    try {
      session.run_collecting(fetches, feed, sink);
    } catch (...) {
      cluster.release_step();
      throw;
    }
    for (const auto& [name, e] : sink.grads) {
      cluster.shard(cluster.shard_of(name)).apply(name, e.grad, *e.optimizer);
    }
    cluster.step_applied();
    if (leader && cluster.global_step() - std::max<int64_t>(last_saved, 0) >=
                      cfg.save_checkpoints_steps) {
      save();
    }
  }
  if (leader) {
    if (!cluster.wait_workers_at_most(1)) return;
    if (last_saved != cluster.global_step()) save();
    cluster.mark_training_done();
  }
}

EvaluatorStats run_evaluator(Experiment& experiment, Cluster& cluster) {
  EvaluatorStats stats;
  Estimator& est = *experiment.estimator;
  const fs::path model_dir = est.config().model_dir;
  int64_t last_step = std::numeric_limits<int64_t>::min();
  while (!cluster.stop_requested()) {
    const bool done = cluster.training_done();
    if (auto latest = CheckpointManager::latest(model_dir)) {
      try {
        const Checkpoint ckpt = restore_checkpoint(*latest);
        if (ckpt.global_step != last_step) {
          if (experiment.checksum_variable) {
            const Tensor* sum = ckpt.find(kChecksumName);
            const double recomputed = sum_values(ckpt);
            if (!sum || std::memcmp(&(*sum)[0], &recomputed, sizeof(double)) != 0) {
              ++stats.checksum_mismatches;
            }
          }
          stats.last_metrics =
              est.evaluate(experiment.eval_input_fn, EvalArgs{.checkpoint_path = latest->string()});
          stats.evaluated_steps.push_back(ckpt.global_step);
          last_step = ckpt.global_step;
        }
      } catch (const Error& e) {
        // Corrupt, partial or already pruned: skip and poll again.
        ++stats.skipped_corrupt;
        if (done) break;
      }
    }
    if (done) break;
    std::this_thread::sleep_for(experiment.eval_poll_interval);
  }
  return stats;
}

ExperimentResult train_and_evaluate(Experiment& experiment, const ClusterSpec& spec) {
  experiment.validate();
  if (spec.num_workers < 1) throw ConfigError("cluster: num_workers must be >= 1");
  for (const auto& f : experiment.failures) {
    if (f.worker < 0 || f.worker >= spec.num_workers) {
      throw ConfigError("experiment: failure injection names worker " + std::to_string(f.worker) +
                        " outside the cluster");
    }
  }
  Cluster cluster(spec.num_ps);
  ExperimentResult result;

  std::mutex err_mu;
  std::exception_ptr first_error;
  auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = e;
    }
    cluster.request_stop();
  };

  std::vector<std::thread> ps;
  for (int i = 0; i < spec.num_ps; ++i) {
    ps.emplace_back([&cluster, i] { cluster.shard(i).serve_until_shutdown(); });
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::thread> workers;
  for (int i = 0; i < spec.num_workers; ++i) cluster.worker_started();
  for (int i = 0; i < spec.num_workers; ++i) {
    workers.emplace_back([&, i] {
      bool again = true;
      while (again) {
        again = false;
        try {
          run_worker(i, experiment, cluster);
        } catch (const InjectedFailure&) {
          for (const auto& f : experiment.failures) {
            if (f.worker == i && f.restart) again = true;
          }
        } catch (...) {
          fail(std::current_exception());
        }
      }
      cluster.worker_finished();
    });
  }
  std::thread evaluator;
  if (spec.evaluator) {
    evaluator = std::thread([&] {
      try {
        result.evaluator = run_evaluator(experiment, cluster);
      } catch (...) {
        fail(std::current_exception());
      }
    });
  }
  for (auto& t : workers) t.join();
  result.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!cluster.training_done()) cluster.request_stop();
  if (evaluator.joinable()) evaluator.join();
  cluster.shutdown();
  for (auto& t : ps) t.join();
  if (first_error) std::rethrow_exception(first_error);
  if (!cluster.training_done()) throw ExecutionError("training ended without a final checkpoint");

  result.global_step = cluster.global_step();
  if (spec.evaluator && !result.evaluator.evaluated_steps.empty() &&
      result.evaluator.evaluated_steps.back() == result.global_step) {
    result.final_metrics = result.evaluator.last_metrics;
  } else {
    result.final_metrics = experiment.estimator->evaluate(experiment.eval_input_fn);
  }
  return result;
}

RunConfig run_config_from_env() {
  const char* raw = std::getenv("ESTIMATOR_RUN_CONFIG");
  if (!raw) throw ConfigError("ESTIMATOR_RUN_CONFIG not set");
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ESTIMATOR_RUN_CONFIG: malformed JSON: ") + e.what());
  }
  RunConfig c = RunConfig::from_json(j);
  c.validate();
  return c;
}

TaskType run_task(const RunConfig& config, Experiment& experiment, Cluster& cluster) {
  config.validate();
  switch (config.task.type) {
    case TaskType::kPs:
      cluster.shard(config.task.index).serve_until_shutdown();
      break;
    case TaskType::kWorker:
      cluster.worker_started();
      try {
        run_worker(config.task.index, experiment, cluster);
      } catch (...) {
        cluster.worker_finished();
        throw;
      }
      cluster.worker_finished();
      break;
    case TaskType::kEvaluator:
      run_evaluator(experiment, cluster);
      break;
    case TaskType::kLocal:
      train_and_evaluate(experiment, ClusterSpec{.num_ps = 1, .num_workers = 1, .evaluator = false});
      break;
  }
  return config.task.type;
}

std::vector<ScalingRow> run_scaling_benchmark(
    const std::function<Experiment(const fs::path& model_dir)>& make,
    const std::vector<int>& worker_counts, std::chrono::duration<double> budget,
    const fs::path& scratch_dir, int num_ps) {
  if (worker_counts.empty()) throw ConfigError("benchmark: worker_counts is empty");
  std::vector<ScalingRow> rows;
  for (int n : worker_counts) {
    if (n < 1) throw ConfigError("benchmark: worker counts must be >= 1");
    const fs::path dir = scratch_dir / ("workers-" + std::to_string(n));
    fs::remove_all(dir);
    Experiment exp = make(dir);
    exp.train_steps = std::numeric_limits<int64_t>::max();
    exp.max_train_time = budget;
    ExperimentResult r =
        train_and_evaluate(exp, ClusterSpec{.num_ps = num_ps, .num_workers = n, .evaluator = false});
    ScalingRow row;
    row.workers = n;
    row.steps_per_sec = static_cast<double>(r.global_step) / std::max(r.train_seconds, 1e-9);
    rows.push_back(row);
  }
  for (auto& row : rows) row.speedup_vs_1 = row.steps_per_sec / rows.front().steps_per_sec;
  return rows;
}

}  // namespace est
