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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "est/checkpoint.hpp"
#include "est/hooks.hpp"
#include "est/model_fn.hpp"
#include "json.hpp"

namespace est {

enum class TaskType { kLocal, kWorker, kPs, kEvaluator };

std::string task_type_name(TaskType t);
TaskType task_type_from_name(const std::string& name);

struct RunConfig {
  std::filesystem::path model_dir;
  int64_t save_checkpoints_steps = 100;
  int keep_checkpoint_max = 5;
  uint64_t seed = 0;
  struct Task {
    TaskType type = TaskType::kLocal;
    int index = 0;
  } task;
  struct Cluster {
    int num_ps = 0;
    int num_workers = 0;
  } cluster;

  // Identity recorded in model_dir/writer_id by the checkpoint writer.
  std::string writer_id() const;
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Pull-based batch source; std::nullopt when exhausted.
using BatchIterator = std::function<std::optional<Batch>()>;
// Each call starts again from the beginning of the data.
using InputFn = std::function<BatchIterator()>;

struct InputOptions {
  int64_t batch_size = 32;
  // Passes over the data; 0 repeats forever.
  int64_t num_epochs = 1;
  // Reshuffles every epoch with this seed when set.
  std::optional<uint64_t> shuffle_seed;
};

// Batches rows of in-memory data. `features` holds examples and/or named
// tensors with a leading row dim; `labels` tensors share that row count.
InputFn make_input_fn(Features features, Labels labels, InputOptions options);

// One prediction per example: name -> per-example tensor.
using Prediction = std::map<std::string, Tensor>;

// Splits each [batch, ...] tensor into `batch` per-example tensors.
std::vector<Prediction> unbatch(const std::vector<std::string>& names,
                                const std::vector<Tensor>& values);

struct TrainArgs {
  std::optional<int64_t> steps;
  std::optional<int64_t> max_steps;
  std::vector<HookPtr> hooks;
};

struct EvalArgs {
  std::optional<int64_t> steps;
  std::vector<HookPtr> hooks;
  std::optional<std::string> checkpoint_path;
};

// Train/evaluate/predict/export around a model_fn. Every call builds a new
// graph, calls model_fn once and restores the latest checkpoint.
class Estimator {
 public:
  Estimator(ModelFn model_fn, RunConfig config, nlohmann::json params = nlohmann::json::object());
  virtual ~Estimator() = default;

  // Returns the final global_step.
  int64_t train(const InputFn& input_fn, const TrainArgs& args = {});
  int64_t train(const InputFn& input_fn, int64_t steps) {
    return train(input_fn, TrainArgs{.steps = steps});
  }

  // Metric values plus "global_step"; appends to eval_records.jsonl.
  std::map<std::string, double> evaluate(const InputFn& input_fn, const EvalArgs& args = {});

  // Streams one Prediction per input example, in input order.
  void predict(const InputFn& input_fn, const std::function<void(Prediction)>& sink,
               const std::optional<std::string>& checkpoint_path = std::nullopt);
  std::vector<Prediction> predict(const InputFn& input_fn,
                                  const std::optional<std::string>& checkpoint_path = std::nullopt);

  // Writes <base>/<timestamp>/{manifest.json, variables.estckpt}.
  std::filesystem::path export_savedmodel(const std::filesystem::path& export_dir_base,
                                          const nlohmann::json& serving_feature_spec =
                                              nlohmann::json::array());

  const RunConfig& config() const { return config_; }
  nlohmann::json& params() { return params_; }
  const nlohmann::json& params() const { return params_; }
  const ModelFn& model_fn() const { return model_fn_; }
  std::optional<std::filesystem::path> latest_checkpoint() const;

 protected:
  // Extra manifest field "estimator", used by loaders of canned models.
  nlohmann::json export_metadata_;

 private:
  struct Built;
  Built build(Mode mode) const;
  std::filesystem::path resolve_checkpoint(const std::optional<std::string>& path) const;

  ModelFn model_fn_;
  RunConfig config_;
  nlohmann::json params_;
};

// Serves predictions from an export directory.
class SavedModelPredictor {
 public:
  SavedModelPredictor(const std::filesystem::path& export_dir, ModelFn model_fn,
                      nlohmann::json params = nlohmann::json::object());

  const nlohmann::json& manifest() const { return manifest_; }
  int64_t global_step() const;
  std::vector<Prediction> predict(const Features& features);

 private:
  nlohmann::json manifest_;
  std::unique_ptr<Graph> graph_;
  std::vector<std::string> names_;
  std::vector<Node> fetches_;
};

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace est
