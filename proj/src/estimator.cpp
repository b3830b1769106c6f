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

#include "est/estimator.hpp"

#include <unistd.h>

#include <chrono>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "est/feature_columns.hpp"
#include "est/hash.hpp"

namespace est {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string task_type_name(TaskType t) {
  switch (t) {
    case TaskType::kLocal: return "local";
    case TaskType::kWorker: return "worker";
    case TaskType::kPs: return "ps";
    case TaskType::kEvaluator: return "evaluator";
  }
  return "local";
}

TaskType task_type_from_name(const std::string& name) {
  if (name == "local") return TaskType::kLocal;
  if (name == "worker") return TaskType::kWorker;
  if (name == "ps") return TaskType::kPs;
  if (name == "evaluator") return TaskType::kEvaluator;
  throw ConfigError("task.type: unknown task type '" + name +
                    "' (expected local, worker, ps or evaluator)");
}

std::string RunConfig::writer_id() const {
  if (task.type == TaskType::kLocal || (task.type == TaskType::kWorker && task.index == 0)) {
    return "chief";
  }
  return task_type_name(task.type) + ":" + std::to_string(task.index);
}

void RunConfig::validate() const {
  if (model_dir.empty()) throw ConfigError("model_dir: must not be empty");
  if (save_checkpoints_steps < 1) throw ConfigError("save_checkpoints_steps: must be >= 1");
  if (keep_checkpoint_max < 0) throw ConfigError("keep_checkpoint_max: must be >= 0");
  if (cluster.num_ps < 0 || cluster.num_workers < 0) {
    throw ConfigError("cluster: sizes must be >= 0");
  }
  if (task.index < 0) throw ConfigError("task.index: must be >= 0");
  auto check = [&](int size, const char* what) {
    if (task.index >= size) {
      throw ConfigError("task.index: " + std::to_string(task.index) + " out of range for " +
                        std::to_string(size) + " " + what + " task(s)");
    }
  };
  switch (task.type) {
    case TaskType::kWorker: check(cluster.num_workers, "worker"); break;
    case TaskType::kPs: check(cluster.num_ps, "ps"); break;
    case TaskType::kEvaluator: check(1, "evaluator"); break;
    case TaskType::kLocal: break;
  }
}

json RunConfig::to_json() const {
  return {{"model_dir", model_dir.string()},
          {"save_checkpoints_steps", save_checkpoints_steps},
          {"keep_checkpoint_max", keep_checkpoint_max},
          {"seed", seed},
          {"task", {{"type", task_type_name(task.type)}, {"index", task.index}}},
          {"cluster", {{"ps", cluster.num_ps}, {"worker", cluster.num_workers}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
  RunConfig c;
  auto get = [&](const json& obj, const char* key, auto& dst, const std::string& path) {
    if (!obj.contains(key)) return;
    try {
      obj.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw ConfigError(path + key + ": wrong type");
    }
  };
  std::string dir = c.model_dir.string();
  get(j, "model_dir", dir, "");
  c.model_dir = dir;
  get(j, "save_checkpoints_steps", c.save_checkpoints_steps, "");
  get(j, "keep_checkpoint_max", c.keep_checkpoint_max, "");
  get(j, "seed", c.seed, "");
  if (j.contains("task")) {
    const json& t = j["task"];
    if (!t.is_object()) throw ConfigError("task: expected an object");
    std::string type = "local";
    get(t, "type", type, "task.");
    c.task.type = task_type_from_name(type);
    get(t, "index", c.task.index, "task.");
  }
  if (j.contains("cluster")) {
    const json& cl = j["cluster"];
    if (!cl.is_object()) throw ConfigError("cluster: expected an object");
    get(cl, "ps", c.cluster.num_ps, "cluster.");
    get(cl, "worker", c.cluster.num_workers, "cluster.");
  }
  return c;
}

namespace {

// Rows `idx` of `t` (leading dim).
Tensor gather_rows(const Tensor& t, const std::vector<size_t>& idx) {
  std::vector<Tensor> rows;
  rows.reserve(idx.size());
  for (size_t i : idx) rows.push_back(t.row(static_cast<int64_t>(i)));
  return stack_rows(rows);
}

}  // namespace

InputFn make_input_fn(Features features, Labels labels, InputOptions options) {
  if (options.batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (options.num_epochs < 0) throw ConfigError("num_epochs: must be >= 0");
  const int64_t n = features.batch_size();
  if (n < 0) throw ConfigError("input: no feature rows");
  for (const auto& [name, t] : labels) {
    if (t.batch() != n) {
      throw ConfigError("label '" + name + "' has " + std::to_string(t.batch()) +
                        " rows, features have " + std::to_string(n));
    }
  }
  auto data = std::make_shared<const std::pair<Features, Labels>>(std::move(features),
                                                                    std::move(labels));
  return [data, options, n]() -> BatchIterator {
    struct State {
      int64_t epoch = 0;
      size_t pos = 0;
      std::vector<size_t> order;
    };
    auto st = std::make_shared<State>();
    auto reorder = [options, n](State& s) {
      s.order.resize(static_cast<size_t>(n));
      std::iota(s.order.begin(), s.order.end(), size_t{0});
      if (options.shuffle_seed) {
        std::mt19937_64 rng(mix_seed(*options.shuffle_seed, static_cast<uint64_t>(s.epoch)));
        std::shuffle(s.order.begin(), s.order.end(), rng);
      }
      s.pos = 0;
    };
    reorder(*st);
    return [data, options, n, st, reorder]() -> std::optional<Batch> {
      if (n == 0) return std::nullopt;
      if (st->pos >= st->order.size()) {
        ++st->epoch;
        if (options.num_epochs != 0 && st->epoch >= options.num_epochs) return std::nullopt;
        reorder(*st);
      }
      if (options.num_epochs != 0 && st->epoch >= options.num_epochs) return std::nullopt;
      const size_t end = std::min(st->order.size(),
                                  st->pos + static_cast<size_t>(options.batch_size));
      std::vector<size_t> idx(st->order.begin() + static_cast<std::ptrdiff_t>(st->pos),
                              st->order.begin() + static_cast<std::ptrdiff_t>(end));
      st->pos = end;
      const auto& [f, l] = *data;
      Batch b;
      if (!f.examples.empty()) {
        for (size_t i : idx) b.features.examples.push_back(f.examples[i]);
      }
      for (const auto& [name, t] : f.tensors) b.features.tensors[name] = gather_rows(t, idx);
      for (const auto& [name, t] : l) b.labels[name] = gather_rows(t, idx);
      return b;
    };
  };
}

std::vector<Prediction> unbatch(const std::vector<std::string>& names,
                                const std::vector<Tensor>& values) {
  std::vector<Prediction> out;
  if (values.empty()) return out;
  const int64_t b = values.front().batch();
  out.resize(static_cast<size_t>(b));
  for (size_t k = 0; k < names.size(); ++k) {
    if (values[k].rank() == 0 || values[k].batch() != b) {
      throw ExecutionError("prediction '" + names[k] + "' has shape " +
                           values[k].shape().to_string() + ", expected a leading batch of " +
                           std::to_string(b));
    }
    for (int64_t r = 0; r < b; ++r) out[static_cast<size_t>(r)][names[k]] = values[k].row(r);
  }
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

struct Estimator::Built {
  std::unique_ptr<Graph> graph;
  EstimatorSpec spec;
};

Estimator::Estimator(ModelFn model_fn, RunConfig config, json params)
    : model_fn_(std::move(model_fn)), config_(std::move(config)), params_(std::move(params)) {
  if (!model_fn_) throw ConfigError("Estimator: model_fn is required");
  config_.validate();
}

Estimator::Built Estimator::build(Mode mode) const {
  Built b;
  b.graph = std::make_unique<Graph>(config_.seed);
  FeatureInputs features(*b.graph);
  LabelInputs labels(*b.graph, mode != Mode::kPredict);
  b.spec = model_fn_(features, labels, mode, params_);
  if (b.spec.mode != mode) {
    throw GraphError("model_fn returned a spec for mode " +
                     std::string(mode_name(b.spec.mode)) + " when called with " +
                     std::string(mode_name(mode)));
  }
  b.spec.validate();
  return b;
}

std::optional<fs::path> Estimator::latest_checkpoint() const {
  return CheckpointManager::latest(config_.model_dir);
}

fs::path Estimator::resolve_checkpoint(const std::optional<std::string>& path) const {
  if (path) return checkpoint_file(config_.model_dir, *path);
  auto latest = latest_checkpoint();
  if (!latest) throw Error("no trained model in " + config_.model_dir.string());
  return *latest;
}

int64_t Estimator::train(const InputFn& input_fn, const TrainArgs& args) {
  if (args.steps && args.max_steps) {
    throw ConfigError("train: set at most one of steps and max_steps");
  }
  if ((args.steps && *args.steps < 0) || (args.max_steps && *args.max_steps < 0)) {
    throw ConfigError("train: steps must be >= 0");
  }
  Built b = build(Mode::kTrain);
  Graph& g = *b.graph;
  RunContext ctx(g);
  ctx.model_dir = config_.model_dir;
  if (auto latest = latest_checkpoint()) {
    const Checkpoint ckpt = restore_checkpoint(*latest);
    load_into(g, ckpt);
    ctx.last_checkpoint_step = ckpt.global_step;
  }
  if (args.max_steps && g.global_step() >= *args.max_steps) return g.global_step();

  CheckpointManager manager(config_.model_dir, config_.keep_checkpoint_max, config_.writer_id());
  ctx.save_checkpoint = [&] { manager.save(g); };

  std::vector<HookPtr> hooks = args.hooks;
  if (args.steps) hooks.push_back(StopAtStepHook::after(*args.steps));
  if (args.max_steps) hooks.push_back(StopAtStepHook::at(*args.max_steps));
  hooks.push_back(std::make_shared<CheckpointSaverHook>(config_.save_checkpoints_steps));
  hooks.push_back(std::make_shared<StepCounterHook>(100));

  BatchIterator it = input_fn();
  Session session(g);
  const Node loss = *b.spec.loss;
  const Node train_op = *b.spec.train_op;
  std::optional<Batch> batch;
  LoopBody body;
  body.next = [&] { return (batch = it()).has_value(); };
  body.run = [&](const std::vector<Node>& extra, std::vector<Tensor>& extra_results) {
    Feed feed;
    feed.features = &batch->features;
    feed.labels = &batch->labels;
    std::vector<Node> fetches{loss, train_op};
    fetches.insert(fetches.end(), extra.begin(), extra.end());
    std::vector<Tensor> out = session.run(fetches, feed);
    ctx.set_last_loss(out[0].item());
    extra_results.assign(std::make_move_iterator(out.begin() + 2),
                         std::make_move_iterator(out.end()));
  };
  run_loop_with_hooks(ctx, hooks, body);
  return g.global_step();
}

std::map<std::string, double> Estimator::evaluate(const InputFn& input_fn, const EvalArgs& args) {
  Built b = build(Mode::kEval);
  Graph& g = *b.graph;
  const fs::path path = resolve_checkpoint(args.checkpoint_path);
  const Checkpoint ckpt = restore_checkpoint(path);
  load_into(g, ckpt);

  std::vector<Node> updates;
  for (const auto& [name, m] : b.spec.eval_metrics) updates.push_back(m.update);
  RunContext ctx(g);
  ctx.model_dir = config_.model_dir;
  BatchIterator it = input_fn();
  Session session(g);
  int64_t done = 0;
  std::optional<Batch> batch;
  LoopBody body;
  body.next = [&] {
    if (args.steps && done >= *args.steps) return false;
    return (batch = it()).has_value();
  };
  body.run = [&](const std::vector<Node>& extra, std::vector<Tensor>& extra_results) {
    ++done;
    Feed feed;
    feed.features = &batch->features;
    feed.labels = &batch->labels;
    std::vector<Node> fetches{*b.spec.loss};
    fetches.insert(fetches.end(), updates.begin(), updates.end());
    fetches.insert(fetches.end(), extra.begin(), extra.end());
    std::vector<Tensor> out = session.run(fetches, feed);
    ctx.set_last_loss(out[0].item());
    extra_results.assign(
        std::make_move_iterator(out.begin() + static_cast<std::ptrdiff_t>(1 + updates.size())),
        std::make_move_iterator(out.end()));
  };
  run_loop_with_hooks(ctx, args.hooks, body);

  std::map<std::string, double> result;
  for (const auto& [name, m] : b.spec.eval_metrics) result[name] = session.run(m.value).item();
  result["global_step"] = static_cast<double>(ckpt.global_step);

  json record = {{"global_step", ckpt.global_step},
                 {"checkpoint", path.filename().string()},
                 {"metrics", result}};
  fs::create_directories(config_.model_dir);
  std::ofstream out(config_.model_dir / "eval_records.jsonl", std::ios::app);
  out << record.dump() << '\n';
  if (!out) throw Error("cannot append to eval_records.jsonl");
  return result;
}

void Estimator::predict(const InputFn& input_fn, const std::function<void(Prediction)>& sink,
                        const std::optional<std::string>& checkpoint_path) {
  Built b = build(Mode::kPredict);
  Graph& g = *b.graph;
  load_into(g, restore_checkpoint(resolve_checkpoint(checkpoint_path)));
  std::vector<std::string> names;
  std::vector<Node> fetches;
  for (const auto& [name, n] : b.spec.predictions) {
    names.push_back(name);
    fetches.push_back(n);
  }
  Session session(g);
  BatchIterator it = input_fn();
  while (std::optional<Batch> batch = it()) {
    Feed feed;
    feed.features = &batch->features;
    for (Prediction& p : unbatch(names, session.run(fetches, feed))) sink(std::move(p));
  }
}

std::vector<Prediction> Estimator::predict(const InputFn& input_fn,
                                           const std::optional<std::string>& checkpoint_path) {
  std::vector<Prediction> out;
  predict(input_fn, [&](Prediction p) { out.push_back(std::move(p)); }, checkpoint_path);
  return out;
}

fs::path Estimator::export_savedmodel(const fs::path& export_dir_base,
                                      const json& serving_feature_spec) {
  Built b = build(Mode::kPredict);
  Graph& g = *b.graph;
  const Checkpoint ckpt = restore_checkpoint(resolve_checkpoint(std::nullopt));
  load_into(g, ckpt);

  json signature = json::object();
  const auto sig = b.spec.export_outputs.empty() ? signature_of(b.spec.predictions)
                                                 : b.spec.export_outputs;
  for (const auto& [name, shape] : sig) signature[name] = shape.dims();
  json columns = json::array();
  if (serving_feature_spec.is_array() && !serving_feature_spec.empty()) {
    for (const auto& c : columns_from_json(serving_feature_spec)) columns.push_back(c->name());
  }
  json manifest = {{"format_version", 1},
                   {"global_step", ckpt.global_step},
                   {"feature_spec", serving_feature_spec},
                   {"signature", signature},
                   {"columns", columns},
                   {"params", params_},
                   {"seed", config_.seed}};
  if (!export_metadata_.is_null()) manifest["estimator"] = export_metadata_;

  std::error_code ec;
  fs::create_directories(export_dir_base, ec);
  if (ec) throw Error("cannot create export directory " + export_dir_base.string());
  auto ts = static_cast<int64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                     std::chrono::system_clock::now().time_since_epoch())
                                     .count());
  const fs::path tmp = export_dir_base / (".tmp-export-" + std::to_string(::getpid()) + "-" +
                                          std::to_string(ts));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_checkpoint(tmp / "variables.estckpt", snapshot(g));
  write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
  while (true) {
    const fs::path dst = export_dir_base / std::to_string(ts);
    if (!fs::exists(dst)) {
      fs::rename(tmp, dst, ec);
      if (!ec) return dst;
      if (!fs::exists(dst)) throw Error("cannot publish export " + dst.string());
    }
    ++ts;
  }
}

SavedModelPredictor::SavedModelPredictor(const fs::path& export_dir, ModelFn model_fn,
                                         json params)
    : manifest_(read_json_file(export_dir / "manifest.json")) {
  if (manifest_.value("format_version", 0) != 1) {
    throw Error("unsupported export format in " + export_dir.string());
  }
  if (params.is_object() && params.empty() && manifest_.contains("params")) {
    params = manifest_["params"];
  }
  graph_ = std::make_unique<Graph>(manifest_.value("seed", uint64_t{0}));
  FeatureInputs features(*graph_);
  LabelInputs labels(*graph_, false);
  EstimatorSpec spec = model_fn(features, labels, Mode::kPredict, params);
  spec.validate();
  load_into(*graph_, restore_checkpoint(export_dir / "variables.estckpt"));
  for (const auto& [name, n] : spec.predictions) {
    names_.push_back(name);
    fetches_.push_back(n);
  }
}

int64_t SavedModelPredictor::global_step() const { return graph_->global_step(); }

std::vector<Prediction> SavedModelPredictor::predict(const Features& features) {
  Feed feed;
  feed.features = &features;
  return unbatch(names_, Session(*graph_).run(fetches_, feed));
}

}  // namespace est
