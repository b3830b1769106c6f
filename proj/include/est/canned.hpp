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

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "est/estimator.hpp"
#include "est/feature_columns.hpp"

namespace est {

struct CannedConfig {
  std::vector<Column> linear_columns;
  std::vector<Column> dnn_columns;
  std::vector<int64_t> hidden_units;
  int64_t n_classes = 2;
  int64_t label_dimension = 1;
  std::string activation = "relu";
  // A dropout layer follows each hidden layer when set (active in TRAIN).
  std::optional<double> dropout;
  std::string linear_optimizer = "adagrad";
  double linear_learning_rate = 0.05;
  std::string dnn_optimizer = "sgd";
  double dnn_learning_rate = 0.05;
  std::string label_name = "label";
  std::string weight_column;

  nlohmann::json to_json() const;
  // Accepts the to_json fields; "linear_feature_columns"/"dnn_feature_columns"
  // hold column specs, and "optimizer"/"learning_rate" set both towers.
  static CannedConfig from_json(const nlohmann::json& j);
};

enum class CannedType {
  kLinearClassifier,
  kLinearRegressor,
  kDnnClassifier,
  kDnnRegressor,
  kDnnLinearCombinedClassifier,
};

std::string canned_type_name(CannedType t);
CannedType canned_type_from_name(const std::string& name);

// Validates `config` for `type` and returns the model_fn.
ModelFn canned_model_fn(CannedType type, const CannedConfig& config);

class LinearClassifier : public Estimator {
 public:
  LinearClassifier(const CannedConfig& config, RunConfig run_config);
};

class LinearRegressor : public Estimator {
 public:
  LinearRegressor(const CannedConfig& config, RunConfig run_config);
};

class DnnClassifier : public Estimator {
 public:
  DnnClassifier(const CannedConfig& config, RunConfig run_config);
};

class DnnRegressor : public Estimator {
 public:
  DnnRegressor(const CannedConfig& config, RunConfig run_config);
};

class DnnLinearCombinedClassifier : public Estimator {
 public:
  DnnLinearCombinedClassifier(const CannedConfig& config, RunConfig run_config);
};

std::unique_ptr<Estimator> make_canned_estimator(CannedType type, const CannedConfig& config,
                                                 RunConfig run_config);

// Predictor for an export written by a canned estimator; needs only the
// export directory.
SavedModelPredictor load_canned_savedmodel(const std::filesystem::path& export_dir);

}  // namespace est
