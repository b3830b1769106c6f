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

#include "est/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

namespace est {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw ConfigError(where + ": unterminated quote");
  out.push_back(std::move(cell));
  return out;
}

std::vector<std::string> split_multi(const std::string& cell) {
  std::vector<std::string> out;
  if (cell.empty()) return out;
  size_t start = 0;
  while (true) {
    const size_t bar = cell.find('|', start);
    out.push_back(cell.substr(start, bar - start));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(where + ": not a number: '" + s + "'");
  }
  return v;
}

void collect_numeric(const Column& c, std::set<std::string>& out) {
  if (!c) return;
  if (c->type == ColumnType::kNumeric) out.insert(c->key);
  collect_numeric(c->source, out);
  for (const auto& s : c->sources) collect_numeric(s, out);
}

// Rethrows a ConfigError from `fn` with `field` prefixed.
template <class F>
auto in_field(const std::string& field, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(field + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

const std::set<std::string> kCannedKeys = {
    "hidden_units",   "n_classes",            "label_dimension", "activation",
    "dropout",        "optimizer",            "learning_rate",   "linear_optimizer",
    "linear_learning_rate", "dnn_optimizer",  "dnn_learning_rate", "weight_column"};

const std::set<std::string> kJobKeys = {"estimator_type", "feature_spec",
                                        "linear_feature_columns", "dnn_feature_columns",
                                        "data", "run", "train_steps"};

std::vector<Column> tower(const json& spec_json, const std::vector<Column>& spec,
                          const json& list, const std::string& field) {
  if (!list.is_array()) throw ConfigError(field + ": expected a list");
  std::vector<Column> out;
  for (size_t i = 0; i < list.size(); ++i) {
    const std::string where = field + "[" + std::to_string(i) + "]";
    const json& x = list[i];
    if (x.is_string()) {
      const auto name = x.get<std::string>();
      Column found;
      for (const auto& c : spec) {
        if (c->name() == name) found = c;
      }
      if (!found) throw ConfigError(where + ": no feature_spec column named '" + name + "'");
      out.push_back(found);
    } else {
      json all = spec_json.is_array() ? spec_json : json::array();
      all.push_back(x);
      out.push_back(in_field(where, [&] { return columns_from_json(all).back(); }));
    }
  }
  return out;
}

fs::path resolve_path(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

CsvDataset load_csv(const fs::path& path, const std::string& field) {
  if (path.empty()) throw ConfigError(field + ": not set");
  return CsvDataset::read(path);
}

}  // namespace

CsvDataset CsvDataset::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file " + path.string());
  return parse(in, path.string());
}

CsvDataset CsvDataset::parse(std::istream& in, const std::string& source) {
  CsvDataset d;
  d.source_ = source;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    auto cells = split_csv_line(line, where);
    if (d.header_.empty()) {
      std::set<std::string> seen;
      for (const auto& h : cells) {
        if (h.empty()) throw ConfigError(where + ": empty column name");
        if (!seen.insert(h).second) throw ConfigError(where + ": duplicate column '" + h + "'");
      }
      d.header_ = std::move(cells);
      continue;
    }
    if (cells.size() != d.header_.size()) {
      throw ConfigError(where + ": expected " + std::to_string(d.header_.size()) +
                        " fields, got " + std::to_string(cells.size()));
    }
    d.rows_.push_back(std::move(cells));
  }
  if (d.header_.empty()) throw ConfigError(source + ": missing header row");
  return d;
}

bool CsvDataset::has_column(const std::string& name) const {
  return std::find(header_.begin(), header_.end(), name) != header_.end();
}

size_t CsvDataset::column_index(const std::string& name) const {
  auto it = std::find(header_.begin(), header_.end(), name);
  if (it == header_.end()) throw ConfigError(source_ + ": no column '" + name + "'");
  return static_cast<size_t>(it - header_.begin());
}

Features CsvDataset::features(const std::set<std::string>& numeric,
                              const std::set<std::string>& exclude) const {
  Features f;
  f.examples.reserve(rows_.size());
  for (size_t r = 0; r < rows_.size(); ++r) {
    Example e;
    for (size_t c = 0; c < header_.size(); ++c) {
      const std::string& name = header_[c];
      if (exclude.count(name)) continue;
      auto parts = split_multi(rows_[r][c]);
      if (numeric.count(name)) {
        FeatureValue::Dense v;
        const std::string where = source_ + ": row " + std::to_string(r + 1) + ", column '" + name + "'";
        for (const auto& p : parts) v.push_back(parse_number(p, where));
        e.features[name] = std::move(v);
      } else {
        e.features[name] = std::move(parts);
      }
    }
    f.examples.push_back(std::move(e));
  }
  return f;
}

Tensor CsvDataset::numeric_column(const std::string& name, int64_t width) const {
  const size_t c = column_index(name);
  const auto n = static_cast<int64_t>(rows_.size());
  Tensor t(width == 1 ? Shape{n} : Shape{n, width});
  for (size_t r = 0; r < rows_.size(); ++r) {
    const std::string where = source_ + ": row " + std::to_string(r + 1) + ", column '" + name + "'";
    const auto parts = split_multi(rows_[r][c]);
    if (static_cast<int64_t>(parts.size()) != width) {
      throw ConfigError(where + ": expected " + std::to_string(width) + " values");
    }
    for (int64_t k = 0; k < width; ++k) {
      t[r * static_cast<size_t>(width) + static_cast<size_t>(k)] =
          parse_number(parts[static_cast<size_t>(k)], where);
    }
  }
  return t;
}

JobConfig JobConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("job config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kJobKeys.count(key) && !kCannedKeys.count(key)) {
      throw ConfigError(key + ": unknown field");
    }
  }
  JobConfig job;
  if (!j.contains("estimator_type")) throw ConfigError("estimator_type: missing");
  job.estimator_type = in_field("estimator_type", [&] {
    return canned_type_from_name(j.at("estimator_type").get<std::string>());
  });

  const json spec_json = j.value("feature_spec", json::array());
  if (!spec_json.is_array() || spec_json.empty()) {
    throw ConfigError("feature_spec: expected a non-empty list");
  }
  job.feature_spec = in_field("feature_spec", [&] { return columns_from_json(spec_json); });

  json canned = json::object();
  for (const auto& key : kCannedKeys) {
    if (j.contains(key)) canned[key] = j[key];
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    if (!d.is_object()) throw ConfigError("data: expected an object");
    for (const auto& [key, value] : d.items()) {
      if (key != "train_csv" && key != "eval_csv" && key != "batch_size" &&
          key != "label_column" && key != "shuffle_seed") {
        throw ConfigError("data." + key + ": unknown field");
      }
    }
    in_field("data.train_csv", [&] {
      job.data.train_csv = resolve_path(base_dir, d.value("train_csv", std::string()));
    });
    in_field("data.eval_csv", [&] {
      job.data.eval_csv = resolve_path(base_dir, d.value("eval_csv", std::string()));
    });
    in_field("data.batch_size", [&] { job.data.batch_size = d.value("batch_size", int64_t{32}); });
    in_field("data.label_column", [&] {
      job.data.label_column = d.value("label_column", std::string("label"));
    });
    if (d.contains("shuffle_seed")) {
      in_field("data.shuffle_seed", [&] { job.data.shuffle_seed = d["shuffle_seed"].get<uint64_t>(); });
    }
  }
  if (job.data.batch_size < 1) throw ConfigError("data.batch_size: must be >= 1");
  if (job.data.label_column.empty()) throw ConfigError("data.label_column: must not be empty");
  canned["label_name"] = job.data.label_column;

  job.canned = in_field("config", [&] { return CannedConfig::from_json(canned); });
  const bool linear = job.estimator_type == CannedType::kLinearClassifier ||
                      job.estimator_type == CannedType::kLinearRegressor;
  const bool dnn = job.estimator_type == CannedType::kDnnClassifier ||
                   job.estimator_type == CannedType::kDnnRegressor;
  if (j.contains("linear_feature_columns")) {
    job.canned.linear_columns =
        tower(spec_json, job.feature_spec, j["linear_feature_columns"], "linear_feature_columns");
  } else if (linear) {
    job.canned.linear_columns = job.feature_spec;
  }
  if (j.contains("dnn_feature_columns")) {
    job.canned.dnn_columns =
        tower(spec_json, job.feature_spec, j["dnn_feature_columns"], "dnn_feature_columns");
  } else if (dnn) {
    job.canned.dnn_columns = job.feature_spec;
  }
  // Rejects a config the estimator would reject, before any data is read.
  canned_model_fn(job.estimator_type, job.canned);

  if (j.contains("run")) {
    job.run = in_field("run", [&] { return RunConfig::from_json(j["run"]); });
    job.run.model_dir = resolve_path(base_dir, job.run.model_dir);
  }
  in_field("run", [&] { job.run.validate(); });
  in_field("train_steps", [&] { job.train_steps = j.value("train_steps", int64_t{0}); });
  if (job.train_steps < 0) throw ConfigError("train_steps: must be >= 0");
  return job;
}

JobConfig JobConfig::load(const fs::path& path) {
  json j;
  {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  if (const char* env = std::getenv("ESTIMATOR_RUN_CONFIG"); env && *env) {
    json patch;
    try {
      patch = json::parse(env);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("ESTIMATOR_RUN_CONFIG: ") + e.what());
    }
    if (!patch.is_object()) throw ConfigError("ESTIMATOR_RUN_CONFIG: expected a JSON object");
    if (!j.is_object()) throw ConfigError("job config: expected a JSON object");
    if (!j.contains("run")) j["run"] = json::object();
    j["run"].merge_patch(patch);
  }
  return from_json(j, path.parent_path());
}

bool JobConfig::is_classifier() const {
  return estimator_type == CannedType::kLinearClassifier ||
         estimator_type == CannedType::kDnnClassifier ||
         estimator_type == CannedType::kDnnLinearCombinedClassifier;
}

std::set<std::string> JobConfig::numeric_keys() const {
  std::set<std::string> out;
  for (const auto& c : canned.linear_columns) collect_numeric(c, out);
  for (const auto& c : canned.dnn_columns) collect_numeric(c, out);
  if (!canned.weight_column.empty()) out.insert(canned.weight_column);
  return out;
}

void JobConfig::check_columns(const CsvDataset& csv, bool need_label) const {
  auto need = [&](const std::string& key, const std::string& what) {
    if (!csv.has_column(key)) {
      throw ConfigError(what + ": column '" + key + "' not found in " + csv.source());
    }
  };
  for (const auto* list : {&canned.linear_columns, &canned.dnn_columns}) {
    for (const auto& c : *list) {
      for (const auto& key : c->input_keys()) need(key, "feature column '" + c->name() + "'");
    }
  }
  if (!canned.weight_column.empty()) need(canned.weight_column, "weight_column");
  if (need_label) need(data.label_column, "data.label_column");
}

std::unique_ptr<Estimator> JobConfig::make_estimator() const {
  return make_canned_estimator(estimator_type, canned, run);
}

namespace {

std::pair<Features, Labels> labelled(const JobConfig& job, const CsvDataset& csv) {
  job.check_columns(csv, true);
  Features f = csv.features(job.numeric_keys(), {job.data.label_column});
  const int64_t width = job.is_classifier() ? 1 : job.canned.label_dimension;
  Labels l{{job.data.label_column, csv.numeric_column(job.data.label_column, width)}};
  return {std::move(f), std::move(l)};
}

}  // namespace

InputFn JobConfig::train_input_fn(const CsvDataset& csv) const {
  auto [f, l] = labelled(*this, csv);
  return make_input_fn(std::move(f), std::move(l),
                       InputOptions{.batch_size = data.batch_size,
                                    .num_epochs = 0,
                                    .shuffle_seed = data.shuffle_seed});
}

InputFn JobConfig::eval_input_fn(const CsvDataset& csv) const {
  auto [f, l] = labelled(*this, csv);
  return make_input_fn(std::move(f), std::move(l),
                       InputOptions{.batch_size = data.batch_size, .num_epochs = 1});
}

InputFn JobConfig::predict_input_fn(const CsvDataset& csv) const {
  check_columns(csv, false);
  Features f = csv.features(numeric_keys(), {data.label_column});
  return make_input_fn(std::move(f), {},
                       InputOptions{.batch_size = data.batch_size, .num_epochs = 1});
}

int64_t job_train(const JobConfig& job) {
  const CsvDataset csv = load_csv(job.data.train_csv, "data.train_csv");
  InputFn input = job.train_input_fn(csv);
  return job.make_estimator()->train(input, job.train_steps);
}

std::map<std::string, double> job_evaluate(const JobConfig& job) {
  const fs::path& p = job.data.eval_csv.empty() ? job.data.train_csv : job.data.eval_csv;
  const CsvDataset csv = load_csv(p, "data.eval_csv");
  InputFn input = job.eval_input_fn(csv);
  return job.make_estimator()->evaluate(input);
}

int64_t job_predict(const JobConfig& job, const fs::path& input_csv, std::ostream& out) {
  const CsvDataset csv = load_csv(input_csv, "input");
  InputFn input = job.predict_input_fn(csv);
  int64_t n = 0;
  job.make_estimator()->predict(input, [&](Prediction p) {
    out << prediction_to_json(p).dump() << '\n';
    ++n;
  });
  out.flush();
  return n;
}

fs::path job_export(const JobConfig& job, const fs::path& export_base) {
  return job.make_estimator()->export_savedmodel(export_base);
}

std::vector<ScalingRow> job_benchmark_scaling(const JobConfig& job,
                                              const std::vector<int>& worker_counts,
                                              std::chrono::duration<double> budget,
                                              const fs::path& scratch_dir, int num_ps) {
  const CsvDataset train = load_csv(job.data.train_csv, "data.train_csv");
  const InputFn train_fn = job.train_input_fn(train);
  const InputFn eval_fn = job.eval_input_fn(train);
  auto make = [&](const fs::path& dir) {
    RunConfig run = job.run;
    run.model_dir = dir;
    Experiment e;
    e.estimator = make_canned_estimator(job.estimator_type, job.canned, run);
    e.train_input_fn = train_fn;
    e.eval_input_fn = eval_fn;
    return e;
  };
  return run_scaling_benchmark(make, worker_counts, budget, scratch_dir, num_ps);
}

json metrics_to_json(const std::map<std::string, double>& metrics) {
  json out = json::object();
  for (const auto& [k, v] : metrics) {
    if (k == "global_step") {
      out[k] = static_cast<int64_t>(v);
    } else {
      out[k] = v;
    }
  }
  return out;
}

json prediction_to_json(const Prediction& p) {
  json out = json::object();
  for (const auto& [k, t] : p) {
    if (k == "class_id" && t.rank() == 0) {
      out[k] = static_cast<int64_t>(t[0]);
    } else if (t.rank() == 0) {
      out[k] = t[0];
    } else {
      out[k] = t.raw();
    }
  }
  return out;
}

void write_scaling_csv(const std::vector<ScalingRow>& rows, std::ostream& out) {
  out << "workers,steps_per_sec,speedup_vs_1\n";
  for (const auto& r : rows) {
    out << r.workers << ',' << std::setprecision(6) << r.steps_per_sec << ','
        << r.speedup_vs_1 << '\n';
  }
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train, evaluate and serve canned estimators from CSV data"};
  app.require_subcommand(1);
  std::string config;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* c = app.add_subcommand(name, help);
    c->add_option("--config", config, "job config JSON")->required();
    return c;
  };
  CLI::App* train = add("train", "train for train_steps steps");
  CLI::App* evaluate = add("evaluate", "evaluate the latest checkpoint on data.eval_csv");
  CLI::App* predict = add("predict", "write one JSON prediction per CSV row");
  std::string input;
  std::string output;
  predict->add_option("--input", input, "CSV file to predict on")->required();
  predict->add_option("--output", output, "JSONL output file (default stdout)");
  CLI::App* exp = add("export", "export the latest checkpoint for serving");
  std::string export_dir;
  exp->add_option("--dir", export_dir, "export base directory")->required();
  CLI::App* bench = add("benchmark-scaling", "global steps/sec over worker counts");
  std::vector<int> workers{1, 2, 4};
  double seconds = 30;
  int num_ps = 1;
  std::string scratch;
  std::string csv_out;
  bench->add_option("--workers", workers, "worker counts")->delimiter(',');
  bench->add_option("--seconds", seconds, "wall-time budget per count");
  bench->add_option("--ps", num_ps, "parameter servers");
  bench->add_option("--scratch", scratch, "directory for benchmark model dirs");
  bench->add_option("--output", csv_out, "CSV output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    const JobConfig job = JobConfig::load(config);
    if (*train) {
      out << json{{"global_step", job_train(job)}}.dump() << '\n';
    } else if (*evaluate) {
      out << metrics_to_json(job_evaluate(job)).dump() << '\n';
    } else if (*predict) {
      if (output.empty()) {
        job_predict(job, input, out);
      } else {
        std::ofstream f(output);
        if (!f) throw ConfigError("--output: cannot write " + output);
        job_predict(job, input, f);
      }
    } else if (*exp) {
      out << job_export(job, export_dir).string() << '\n';
    } else if (*bench) {
      if (workers.empty()) throw ConfigError("--workers: must not be empty");
      const fs::path dir = scratch.empty() ? job.run.model_dir / "benchmark" : fs::path(scratch);
      const auto rows = job_benchmark_scaling(job, workers, std::chrono::duration<double>(seconds),
                                              dir, num_ps);
      if (csv_out.empty()) {
        write_scaling_csv(rows, out);
      } else {
        std::ofstream f(csv_out);
        if (!f) throw ConfigError("--output: cannot write " + csv_out);
        write_scaling_csv(rows, f);
      }
      err << std::left << std::setw(8) << "workers" << std::setw(16) << "steps_per_sec"
          << std::setw(14) << "speedup_vs_1" << "ideal_linear\n";
      for (const auto& r : rows) {
        err << std::setw(8) << r.workers << std::setw(16) << std::setprecision(6)
            << r.steps_per_sec << std::setw(14) << r.speedup_vs_1
            << static_cast<double>(r.workers) / rows.front().workers << '\n';
      }
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NanLossError& e) {
    err << "training failed: " << e.what() << '\n';
    return kExitNanLoss;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitOk;
}

}  // namespace est
