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
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "est/canned.hpp"
#include "est/experiment.hpp"

namespace est {

// A CSV file with a header row. Cells stay raw strings until typed by
// features() or numeric_column().
class CsvDataset {
 public:
  static CsvDataset read(const std::filesystem::path& path);
  static CsvDataset parse(std::istream& in, const std::string& source);

  const std::vector<std::string>& header() const { return header_; }
  const std::string& source() const { return source_; }
  int64_t num_rows() const { return static_cast<int64_t>(rows_.size()); }
  bool has_column(const std::string& name) const;
  size_t column_index(const std::string& name) const;

  // One example per row with every column except `exclude`. Columns in
  // `numeric` parse as floats, the rest as category strings. Cells split
  // on '|'.
  Features features(const std::set<std::string>& numeric,
                    const std::set<std::string>& exclude = {}) const;
  // Column `name` as [rows] (width 1) or [rows, width].
  Tensor numeric_column(const std::string& name, int64_t width = 1) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct DataConfig {
  std::filesystem::path train_csv;
  std::filesystem::path eval_csv;
  int64_t batch_size = 32;
  std::string label_column = "label";
  std::optional<uint64_t> shuffle_seed;
};

// A training job: canned estimator, its columns, data and run settings.
struct JobConfig {
  CannedType estimator_type = CannedType::kLinearClassifier;
  std::vector<Column> feature_spec;
  CannedConfig canned;
  DataConfig data;
  RunConfig run;
  int64_t train_steps = 0;

  // Relative paths resolve against `base_dir`. Tower lists
  // ("linear_feature_columns", "dnn_feature_columns") hold column objects
  // or names from "feature_spec"; an absent list defaults to the whole
  // feature_spec for the tower the estimator type has.
  static JobConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  // Reads `path`; when ESTIMATOR_RUN_CONFIG is set its object is merged
  // over the "run" section.
  static JobConfig load(const std::filesystem::path& path);

  bool is_classifier() const;
  // Keys read as floats: numeric feature sources, the weight column.
  std::set<std::string> numeric_keys() const;
  // Throws ConfigError naming the first referenced column `csv` lacks.
  void check_columns(const CsvDataset& csv, bool need_label) const;

  std::unique_ptr<Estimator> make_estimator() const;
  InputFn train_input_fn(const CsvDataset& csv) const;
  InputFn eval_input_fn(const CsvDataset& csv) const;
  InputFn predict_input_fn(const CsvDataset& csv) const;
};

// Library forms of the commands. Each checks the CSV it reads first.
int64_t job_train(const JobConfig& job);
std::map<std::string, double> job_evaluate(const JobConfig& job);
// Writes one JSON object per input row; returns the row count.
int64_t job_predict(const JobConfig& job, const std::filesystem::path& input_csv,
                    std::ostream& out);
std::filesystem::path job_export(const JobConfig& job, const std::filesystem::path& export_base);
std::vector<ScalingRow> job_benchmark_scaling(const JobConfig& job,
                                              const std::vector<int>& worker_counts,
                                              std::chrono::duration<double> budget,
                                              const std::filesystem::path& scratch_dir,
                                              int num_ps = 1);

nlohmann::json metrics_to_json(const std::map<std::string, double>& metrics);
nlohmann::json prediction_to_json(const Prediction& p);
// Header "workers,steps_per_sec,speedup_vs_1".
void write_scaling_csv(const std::vector<ScalingRow>& rows, std::ostream& out);

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNanLoss = 3;

// The command-line tool: train, evaluate, predict, export,
// benchmark-scaling.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace est
