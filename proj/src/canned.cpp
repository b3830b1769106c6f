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

#include "est/canned.hpp"

#include "est/heads.hpp"
#include "est/ops.hpp"
#include "est/optimizer.hpp"

namespace est {
namespace {

using json = nlohmann::json;

constexpr const char* kTypeNames[] = {"linear_classifier", "linear_regressor", "dnn_classifier",
                                      "dnn_regressor", "dnn_linear_combined_classifier"};

bool is_classifier(CannedType t) {
  return t == CannedType::kLinearClassifier || t == CannedType::kDnnClassifier ||
         t == CannedType::kDnnLinearCombinedClassifier;
}
bool has_linear(CannedType t) {
  return t == CannedType::kLinearClassifier || t == CannedType::kLinearRegressor ||
         t == CannedType::kDnnLinearCombinedClassifier;
}
bool has_dnn(CannedType t) {
  return t == CannedType::kDnnClassifier || t == CannedType::kDnnRegressor ||
         t == CannedType::kDnnLinearCombinedClassifier;
}

void validate(CannedType type, const CannedConfig& c) {
  const std::string name = canned_type_name(type);
  if (has_linear(type)) {
    if (c.linear_columns.empty()) throw ConfigError(name + ": linear_feature_columns is empty");
    for (const auto& col : c.linear_columns) {
      if (col->type == ColumnType::kEmbedding || col->type == ColumnType::kSharedEmbedding) {
        throw ConfigError(name + ": embedding column '" + col->name() +
                          "' is not allowed on the linear path");
      }
    }
  } else if (!c.linear_columns.empty()) {
    throw ConfigError(name + ": linear_feature_columns is not used by this estimator");
  }
  if (has_dnn(type)) {
    if (c.dnn_columns.empty()) throw ConfigError(name + ": dnn_feature_columns is empty");
    if (c.hidden_units.empty()) throw ConfigError(name + ": hidden_units is empty");
    for (int64_t u : c.hidden_units) {
      if (u < 1) throw ConfigError(name + ": hidden_units entries must be >= 1");
    }
    activation_by_name(c.activation);
    if (c.dropout && (*c.dropout < 0 || *c.dropout >= 1)) {
      throw ConfigError(name + ": dropout must be in [0, 1)");
    }
    make_optimizer(c.dnn_optimizer, c.dnn_learning_rate);
  } else if (!c.dnn_columns.empty()) {
    throw ConfigError(name + ": dnn_feature_columns is not used by this estimator");
  }
  if (has_linear(type)) make_optimizer(c.linear_optimizer, c.linear_learning_rate);
  if (is_classifier(type) && c.n_classes < 2) throw ConfigError(name + ": n_classes must be >= 2");
  if (!is_classifier(type) && c.label_dimension < 1) {
    throw ConfigError(name + ": label_dimension must be >= 1");
  }
}

json canned_metadata(CannedType type, const CannedConfig& config) {
  return {{"canned_type", canned_type_name(type)}, {"config", config.to_json()}};
}

}  // namespace

std::string canned_type_name(CannedType t) { return kTypeNames[static_cast<int>(t)]; }

CannedType canned_type_from_name(const std::string& name) {
  for (int i = 0; i < 5; ++i) {
    if (name == kTypeNames[i]) return static_cast<CannedType>(i);
  }
  throw ConfigError("estimator_type: unknown type '" + name + "'");
}

json CannedConfig::to_json() const {
  json j = {{"linear_feature_columns", columns_to_json(linear_columns)},
            {"dnn_feature_columns", columns_to_json(dnn_columns)},
            {"hidden_units", hidden_units},
            {"n_classes", n_classes},
            {"label_dimension", label_dimension},
            {"activation", activation},
            {"linear_optimizer", linear_optimizer},
            {"linear_learning_rate", linear_learning_rate},
            {"dnn_optimizer", dnn_optimizer},
            {"dnn_learning_rate", dnn_learning_rate},
            {"label_name", label_name},
            {"weight_column", weight_column}};
  if (dropout) j["dropout"] = *dropout;
  return j;
}

CannedConfig CannedConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("canned config: expected a JSON object");
  CannedConfig c;
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type");
    }
  };
  auto columns = [&](const char* key) {
    if (!j.contains(key) || (j[key].is_array() && j[key].empty())) return std::vector<Column>{};
    return columns_from_json(j[key]);
  };
  c.linear_columns = columns("linear_feature_columns");
  c.dnn_columns = columns("dnn_feature_columns");
  field("hidden_units", c.hidden_units);
  field("n_classes", c.n_classes);
  field("label_dimension", c.label_dimension);
  field("activation", c.activation);
  if (j.contains("dropout")) {
    double d = 0;
    field("dropout", d);
    c.dropout = d;
  }
  std::string opt;
  double lr = 0;
  if (j.contains("optimizer")) {
    field("optimizer", opt);
    c.linear_optimizer = c.dnn_optimizer = opt;
  }
  if (j.contains("learning_rate")) {
    field("learning_rate", lr);
    c.linear_learning_rate = c.dnn_learning_rate = lr;
  }
  field("linear_optimizer", c.linear_optimizer);
  field("linear_learning_rate", c.linear_learning_rate);
  field("dnn_optimizer", c.dnn_optimizer);
  field("dnn_learning_rate", c.dnn_learning_rate);
  field("label_name", c.label_name);
  field("weight_column", c.weight_column);
  return c;
}

ModelFn canned_model_fn(CannedType type, const CannedConfig& config) {
  validate(type, config);
  HeadPtr head = is_classifier(type)
                     ? multi_class_head(config.n_classes, config.label_name, "head",
                                        config.weight_column)
                     : regression_head(config.label_dimension, config.label_name, "head",
                                       config.weight_column);
  return [type, config, head](const FeatureInputs& features, const LabelInputs& labels, Mode mode,
                              const json&) {
    Graph& g = features.graph();
    const int64_t units = head->logits_dimension();
    std::optional<Node> logits;
    std::vector<Variable> linear_vars;
    std::vector<Variable> dnn_vars;
    if (has_linear(type)) {
      const size_t before = g.variables().size();
      logits = linear_model(g, config.linear_columns, units);
      auto all = g.variables();
      linear_vars.assign(all.begin() + static_cast<std::ptrdiff_t>(before), all.end());
    }
    if (has_dnn(type)) {
      const size_t before = g.variables().size();
      VariableScope scope(g, "dnn");
      Node x = input_layer(g, config.dnn_columns);
      const Activation act = activation_by_name(config.activation);
      for (size_t i = 0; i < config.hidden_units.size(); ++i) {
        x = layers::dense(x, config.hidden_units[i], act, "hiddenlayer_" + std::to_string(i));
        if (config.dropout) x = layers::dropout(x, *config.dropout, mode == Mode::kTrain);
      }
      Node dnn_logits = layers::dense(x, units, {}, "logits");
      logits = logits ? add(*logits, dnn_logits) : dnn_logits;
      auto all = g.variables();
      dnn_vars.assign(all.begin() + static_cast<std::ptrdiff_t>(before), all.end());
    }
    TrainOpFn train_op_fn = [&](Node loss) {
      std::vector<OptimizerGroup> groups;
      if (!linear_vars.empty()) {
        groups.push_back(
            {make_optimizer(config.linear_optimizer, config.linear_learning_rate), linear_vars});
      }
      if (!dnn_vars.empty()) {
        groups.push_back({make_optimizer(config.dnn_optimizer, config.dnn_learning_rate), dnn_vars});
      }
      return minimize(loss, std::move(groups));
    };
    return create_estimator_spec(*head, features, mode, HeadInput::logits(*logits), labels,
                                 train_op_fn);
  };
}

#define EST_CANNED_CTOR(Class, Type)                                          \
  Class::Class(const CannedConfig& config, RunConfig run_config)             \
      : Estimator(canned_model_fn(Type, config), std::move(run_config)) {    \
    export_metadata_ = canned_metadata(Type, config);                        \
  }

EST_CANNED_CTOR(LinearClassifier, CannedType::kLinearClassifier)
EST_CANNED_CTOR(LinearRegressor, CannedType::kLinearRegressor)
EST_CANNED_CTOR(DnnClassifier, CannedType::kDnnClassifier)
EST_CANNED_CTOR(DnnRegressor, CannedType::kDnnRegressor)
EST_CANNED_CTOR(DnnLinearCombinedClassifier, CannedType::kDnnLinearCombinedClassifier)

#undef EST_CANNED_CTOR

std::unique_ptr<Estimator> make_canned_estimator(CannedType type, const CannedConfig& config,
                                                 RunConfig run_config) {
  switch (type) {
    case CannedType::kLinearClassifier:
      return std::make_unique<LinearClassifier>(config, std::move(run_config));
    case CannedType::kLinearRegressor:
      return std::make_unique<LinearRegressor>(config, std::move(run_config));
    case CannedType::kDnnClassifier:
      return std::make_unique<DnnClassifier>(config, std::move(run_config));
    case CannedType::kDnnRegressor:
      return std::make_unique<DnnRegressor>(config, std::move(run_config));
    case CannedType::kDnnLinearCombinedClassifier:
      return std::make_unique<DnnLinearCombinedClassifier>(config, std::move(run_config));
  }
  throw ConfigError("unknown canned estimator type");
}

SavedModelPredictor load_canned_savedmodel(const std::filesystem::path& export_dir) {
  const json manifest = read_json_file(export_dir / "manifest.json");
  if (!manifest.contains("estimator") || !manifest["estimator"].contains("canned_type")) {
    throw Error(export_dir.string() + " was not exported by a canned estimator");
  }
  const json& meta = manifest["estimator"];
  const CannedType type = canned_type_from_name(meta["canned_type"].get<std::string>());
  return SavedModelPredictor(export_dir,
                             canned_model_fn(type, CannedConfig::from_json(meta["config"])));
}

}  // namespace est
