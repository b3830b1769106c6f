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

#include "est/feature_columns.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "est/hash.hpp"
#include "est/ops.hpp"

namespace est {
namespace {

using Inputs = std::span<const Tensor* const>;
using Grads = std::vector<std::optional<Tensor>>;
using json = nlohmann::json;

const FeatureValue& lookup(const Example& ex, const std::string& key) {
  auto it = ex.features.find(key);
  if (it == ex.features.end()) {
    throw ExecutionError("feature '" + key + "' not present in example");
  }
  return it->second;
}

std::vector<std::vector<int64_t>> batch_ids(const FeatureColumn& col,
                                            const Features& features) {
  if (features.examples.empty() && features.batch_size() > 0) {
    throw ExecutionError("column '" + col.name() +
                         "' needs raw examples, got only named tensors");
  }
  std::vector<std::vector<int64_t>> out;
  out.reserve(features.examples.size());
  for (const Example& ex : features.examples) out.push_back(col.ids(ex));
  return out;
}

double combiner_scale(Combiner c, size_t n) {
  switch (c) {
    case Combiner::kSum: return 1.0;
    case Combiner::kMean: return 1.0 / static_cast<double>(n);
    case Combiner::kSqrtn: return 1.0 / std::sqrt(static_cast<double>(n));
  }
  return 1.0;
}

// [batch, id_space] counts of each category id.
class IndicatorOp final : public Op {
 public:
  explicit IndicatorOp(Column col) : col_(std::move(col)) {}
  std::string_view type() const override { return "indicator"; }
  Shape infer_shape(std::span<const Shape>) const override {
    return Shape{Shape::kUnknown, col_->id_space()};
  }
  Tensor forward(Inputs, ExecContext& ctx) const override {
    const auto ids = batch_ids(*col_, ctx.features());
    const int64_t n = col_->id_space();
    Tensor out(Shape{static_cast<int64_t>(ids.size()), n});
    for (size_t r = 0; r < ids.size(); ++r) {
      for (int64_t id : ids[r]) out[r * static_cast<size_t>(n) + static_cast<size_t>(id)] += 1;
    }
    return out;
  }
  Grads backward(Inputs, const Tensor&, const Tensor&, ExecContext&) const override {
    return {};
  }

 private:
  Column col_;
};

// Combined rows of `table` selected by each example's category ids.
class EmbeddingLookupOp final : public Op {
 public:
  EmbeddingLookupOp(Column col, Combiner combiner)
      : col_(std::move(col)), combiner_(combiner) {}
  std::string_view type() const override { return "embedding_lookup"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in[0].rank() != 2) {
      throw GraphError("embedding_lookup: table must have rank 2, got " +
                       in[0].to_string());
    }
    if (in[0][0] >= 0 && in[0][0] < col_->id_space()) {
      throw GraphError("embedding_lookup: table " + in[0].to_string() +
                       " has fewer rows than the id space " +
                       std::to_string(col_->id_space()) + " of '" + col_->name() + "'");
    }
    return Shape{Shape::kUnknown, in[0][1]};
  }
  Tensor forward(Inputs in, ExecContext& ctx) const override {
    const Tensor& table = *in[0];
    const auto d = static_cast<size_t>(table.shape()[1]);
    const auto ids = batch_ids(*col_, ctx.features());
    Tensor out(Shape{static_cast<int64_t>(ids.size()), static_cast<int64_t>(d)});
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r].empty()) continue;
      const double s = combiner_scale(combiner_, ids[r].size());
      for (int64_t id : ids[r]) {
        const size_t base = static_cast<size_t>(id) * d;
        for (size_t j = 0; j < d; ++j) out[r * d + j] += s * table[base + j];
      }
    }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext& ctx) const override {
    const Tensor& table = *in[0];
    const auto d = static_cast<size_t>(table.shape()[1]);
    const auto ids = batch_ids(*col_, ctx.features());
    Tensor grad(table.shape());
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r].empty()) continue;
      const double s = combiner_scale(combiner_, ids[r].size());
      for (int64_t id : ids[r]) {
        const size_t base = static_cast<size_t>(id) * d;
        for (size_t j = 0; j < d; ++j) grad[base + j] += s * g[r * d + j];
      }
    }
    return {std::move(grad)};
  }

 private:
  Column col_;
  Combiner combiner_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void require_categorical(const Column& c, const std::string& what) {
  require(c != nullptr, what + ": column is null");
  require(c->is_categorical(), what + ": '" + c->name() + "' is not categorical");
}

template <typename T>
T field(const json& j, const std::string& type, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(type + " column: missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(type + " column: field '" + std::string(key) +
                      "' has the wrong type");
  }
}

Column resolve(const json& j, std::map<std::string, Column>& named);

Column parse(const json& j, std::map<std::string, Column>& named) {
  if (!j.is_object()) throw ConfigError("feature column must be an object");
  const std::string type = field<std::string>(j, "feature column", "type");
  Column c;
  if (type == "numeric") {
    c = numeric_column(field<std::string>(j, type, "name"),
                       j.value("dim", int64_t{1}));
  } else if (type == "bucketized") {
    if (!j.contains("source")) throw ConfigError("bucketized column: missing field 'source'");
    Column src;
    if (j["source"].is_string()) {
      const auto name = j["source"].get<std::string>();
      auto it = named.find(name);
      src = it != named.end() ? it->second : numeric_column(name);
    } else {
      src = parse(j["source"], named);
    }
    c = bucketized_column(src, field<std::vector<double>>(j, type, "boundaries"));
  } else if (type == "hashed") {
    c = categorical_column_with_hash_bucket(field<std::string>(j, type, "name"),
                                            field<int64_t>(j, type, "num_buckets"));
  } else if (type == "crossed") {
    c = crossed_column(field<std::vector<std::string>>(j, type, "names"),
                       field<int64_t>(j, type, "num_buckets"));
  } else if (type == "indicator") {
    if (!j.contains("column")) throw ConfigError("indicator column: missing field 'column'");
    c = indicator_column(resolve(j["column"], named));
  } else if (type == "embedding") {
    if (!j.contains("column")) throw ConfigError("embedding column: missing field 'column'");
    c = embedding_column(resolve(j["column"], named),
                         j.value("dimension", int64_t{32}),
                         combiner_from_name(j.value("combiner", std::string("mean"))));
  } else if (type == "shared_embedding") {
    if (!j.contains("columns") || !j["columns"].is_array()) {
      throw ConfigError("shared_embedding column: missing list field 'columns'");
    }
    std::vector<Column> cats;
    for (const json& x : j["columns"]) cats.push_back(resolve(x, named));
    c = shared_embedding_columns(std::move(cats), j.value("dimension", int64_t{32}),
                                 field<std::string>(j, type, "shared_name"),
                                 combiner_from_name(j.value("combiner", std::string("mean"))));
  } else {
    throw ConfigError("unknown feature column type '" + type + "'");
  }
  named[c->name()] = c;
  return c;
}

// A nested column object, or the name of a column declared earlier.
Column resolve(const json& j, std::map<std::string, Column>& named) {
  if (j.is_string()) {
    auto it = named.find(j.get<std::string>());
    if (it == named.end()) {
      throw ConfigError("feature column '" + j.get<std::string>() +
                        "' referenced before it is declared");
    }
    return it->second;
  }
  return parse(j, named);
}

}  // namespace

int64_t hash_bucket(std::string_view value, int64_t num_buckets) {
  if (num_buckets < 1) throw GraphError("hash_bucket: num_buckets must be >= 1");
  return static_cast<int64_t>(fnv1a64(value) % static_cast<uint64_t>(num_buckets));
}

std::vector<int64_t> cross(const std::vector<std::vector<std::string>>& parents,
                           int64_t num_buckets) {
  std::vector<int64_t> out;
  if (parents.empty()) return out;
  for (const auto& p : parents) {
    if (p.empty()) return out;
  }
  std::vector<size_t> idx(parents.size(), 0);
  std::string joined;
  while (true) {
    joined.clear();
    for (size_t k = 0; k < parents.size(); ++k) {
      if (k > 0) joined.push_back('\x1F');
      joined += parents[k][idx[k]];
    }
    out.push_back(hash_bucket(joined, num_buckets));
    size_t k = parents.size();
    while (k > 0) {
      --k;
      if (++idx[k] < parents[k].size()) break;
      idx[k] = 0;
      if (k == 0) return out;
    }
  }
}

Combiner combiner_from_name(const std::string& name) {
  if (name == "mean") return Combiner::kMean;
  if (name == "sum") return Combiner::kSum;
  if (name == "sqrtn") return Combiner::kSqrtn;
  throw ConfigError("unknown combiner '" + name + "' (expected mean, sum or sqrtn)");
}

std::string combiner_name(Combiner c) {
  switch (c) {
    case Combiner::kMean: return "mean";
    case Combiner::kSum: return "sum";
    case Combiner::kSqrtn: return "sqrtn";
  }
  return "mean";
}

std::string FeatureColumn::name() const {
  switch (type) {
    case ColumnType::kNumeric:
    case ColumnType::kHashed:
      return key;
    case ColumnType::kBucketized:
      return source->name() + "_bucketized";
    case ColumnType::kCrossed: {
      std::string n;
      for (size_t i = 0; i < keys.size(); ++i) n += (i ? "_X_" : "") + keys[i];
      return n;
    }
    case ColumnType::kEmbedding:
      return source->name() + "_embedding";
    case ColumnType::kIndicator:
      return source->name() + "_indicator";
    case ColumnType::kSharedEmbedding:
      return shared_name;
  }
  return key;
}

int64_t FeatureColumn::output_dim() const {
  switch (type) {
    case ColumnType::kNumeric: return dim;
    case ColumnType::kBucketized:
    case ColumnType::kHashed:
    case ColumnType::kCrossed:
    case ColumnType::kIndicator: return id_space();
    case ColumnType::kEmbedding: return dimension;
    case ColumnType::kSharedEmbedding:
      return dimension * static_cast<int64_t>(sources.size());
  }
  return 0;
}

bool FeatureColumn::is_categorical() const {
  return type == ColumnType::kBucketized || type == ColumnType::kHashed ||
         type == ColumnType::kCrossed;
}

int64_t FeatureColumn::id_space() const {
  switch (type) {
    case ColumnType::kBucketized:
      return source->dim * static_cast<int64_t>(boundaries.size() + 1);
    case ColumnType::kHashed:
    case ColumnType::kCrossed: return num_buckets;
    case ColumnType::kIndicator: return source->id_space();
    case ColumnType::kSharedEmbedding: {
      int64_t n = 0;
      for (const auto& s : sources) n = std::max(n, s->id_space());
      return n;
    }
    case ColumnType::kEmbedding: return source->id_space();
    case ColumnType::kNumeric: return 0;
  }
  return 0;
}

std::vector<std::string> FeatureColumn::input_keys() const {
  switch (type) {
    case ColumnType::kNumeric:
    case ColumnType::kHashed: return {key};
    case ColumnType::kCrossed: return keys;
    case ColumnType::kBucketized:
    case ColumnType::kEmbedding:
    case ColumnType::kIndicator: return source->input_keys();
    case ColumnType::kSharedEmbedding: {
      std::vector<std::string> out;
      for (const auto& s : sources) {
        for (auto& k : s->input_keys()) out.push_back(std::move(k));
      }
      return out;
    }
  }
  return {};
}

std::vector<int64_t> FeatureColumn::ids(const Example& example) const {
  switch (type) {
    case ColumnType::kHashed: {
      std::vector<int64_t> out;
      for (const auto& s : lookup(example, key).as_strings()) {
        out.push_back(hash_bucket(s, num_buckets));
      }
      return out;
    }
    case ColumnType::kCrossed: {
      std::vector<std::vector<std::string>> parents;
      for (const auto& k : keys) parents.push_back(lookup(example, k).as_strings());
      return cross(parents, num_buckets);
    }
    case ColumnType::kBucketized: {
      const auto vals = lookup(example, source->key).as_doubles();
      if (vals.empty()) return {};
      if (static_cast<int64_t>(vals.size()) != source->dim) {
        throw ExecutionError("feature '" + source->key + "' has " +
                             std::to_string(vals.size()) + " values, expected " +
                             std::to_string(source->dim));
      }
      const auto nb = static_cast<int64_t>(boundaries.size() + 1);
      std::vector<int64_t> out;
      for (size_t j = 0; j < vals.size(); ++j) {
        const auto b = std::upper_bound(boundaries.begin(), boundaries.end(), vals[j]) -
                       boundaries.begin();
        out.push_back(static_cast<int64_t>(j) * nb + b);
      }
      return out;
    }
    case ColumnType::kIndicator:
    case ColumnType::kEmbedding:
      return source->ids(example);
    default:
      throw ExecutionError("column '" + name() + "' has no category ids");
  }
}

json FeatureColumn::to_json() const {
  json j;
  switch (type) {
    case ColumnType::kNumeric:
      j = {{"type", "numeric"}, {"name", key}, {"dim", dim}};
      break;
    case ColumnType::kBucketized:
      j = {{"type", "bucketized"}, {"source", source->to_json()}, {"boundaries", boundaries}};
      break;
    case ColumnType::kHashed:
      j = {{"type", "hashed"}, {"name", key}, {"num_buckets", num_buckets}};
      break;
    case ColumnType::kCrossed:
      j = {{"type", "crossed"}, {"names", keys}, {"num_buckets", num_buckets}};
      break;
    case ColumnType::kIndicator:
      j = {{"type", "indicator"}, {"column", source->to_json()}};
      break;
    case ColumnType::kEmbedding:
      j = {{"type", "embedding"}, {"column", source->to_json()},
           {"dimension", dimension}, {"combiner", combiner_name(combiner)}};
      break;
    case ColumnType::kSharedEmbedding: {
      json cols = json::array();
      for (const auto& s : sources) cols.push_back(s->to_json());
      j = {{"type", "shared_embedding"}, {"columns", cols}, {"dimension", dimension},
           {"shared_name", shared_name}, {"combiner", combiner_name(combiner)}};
      break;
    }
  }
  return j;
}

Column numeric_column(const std::string& key, int64_t dim) {
  require(!key.empty(), "numeric column: empty name");
  require(dim >= 1, "numeric column '" + key + "': dim must be >= 1");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kNumeric;
  c->key = key;
  c->dim = dim;
  return c;
}

Column bucketized_column(Column source, std::vector<double> boundaries) {
  require(source && source->type == ColumnType::kNumeric,
          "bucketized column: source must be a numeric column");
  for (size_t i = 1; i < boundaries.size(); ++i) {
    require(boundaries[i - 1] < boundaries[i],
            "bucketized column '" + source->key + "': boundaries must be strictly increasing");
  }
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kBucketized;
  c->source = std::move(source);
  c->boundaries = std::move(boundaries);
  return c;
}

Column categorical_column_with_hash_bucket(const std::string& key, int64_t num_buckets) {
  require(!key.empty(), "hashed column: empty name");
  require(num_buckets >= 1, "hashed column '" + key + "': num_buckets must be >= 1");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kHashed;
  c->key = key;
  c->num_buckets = num_buckets;
  return c;
}

Column crossed_column(std::vector<std::string> keys, int64_t num_buckets) {
  require(keys.size() >= 2, "crossed column: needs at least 2 parent names");
  require(num_buckets >= 1, "crossed column: num_buckets must be >= 1");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kCrossed;
  c->keys = std::move(keys);
  c->num_buckets = num_buckets;
  return c;
}

Column indicator_column(Column categorical) {
  require_categorical(categorical, "indicator column");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kIndicator;
  c->source = std::move(categorical);
  return c;
}

Column embedding_column(Column categorical, int64_t dimension, Combiner combiner) {
  require_categorical(categorical, "embedding column");
  require(dimension >= 1, "embedding column: dimension must be >= 1");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kEmbedding;
  c->source = std::move(categorical);
  c->dimension = dimension;
  c->combiner = combiner;
  return c;
}

Column shared_embedding_columns(std::vector<Column> categoricals, int64_t dimension,
                                const std::string& shared_name, Combiner combiner) {
  require(!categoricals.empty(), "shared_embedding column: no categorical columns");
  require(!shared_name.empty(), "shared_embedding column: empty shared_name");
  require(dimension >= 1, "shared_embedding column: dimension must be >= 1");
  for (const auto& s : categoricals) require_categorical(s, "shared_embedding column");
  auto c = std::make_shared<FeatureColumn>();
  c->type = ColumnType::kSharedEmbedding;
  c->sources = std::move(categoricals);
  c->dimension = dimension;
  c->shared_name = shared_name;
  c->combiner = combiner;
  return c;
}

Column column_from_json(const json& j) {
  return columns_from_json(j).front();
}

std::vector<Column> columns_from_json(const json& j) {
  std::map<std::string, Column> named;
  std::vector<Column> out;
  try {
    if (j.is_array()) {
      for (const json& x : j) out.push_back(parse(x, named));
    } else {
      out.push_back(parse(j, named));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("feature spec: ") + e.what());
  }
  if (out.empty()) throw ConfigError("feature spec: no columns");
  return out;
}

json columns_to_json(const std::vector<Column>& columns) {
  json out = json::array();
  for (const auto& c : columns) out.push_back(c->to_json());
  return out;
}

Node embedding_lookup(Node table, Column categorical, Combiner combiner) {
  require_categorical(categorical, "embedding_lookup");
  return table.graph()->add(std::make_shared<EmbeddingLookupOp>(std::move(categorical), combiner),
                            {table});
}

namespace {

Variable embedding_table(Graph& g, const std::string& scope, int64_t rows, int64_t dim) {
  VariableScope s(g, scope, Reuse::kAuto);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  return g.get_variable("embedding_weights", {rows, dim}, init::uniform(-bound, bound));
}

}  // namespace

Node input_layer(Graph& g, const std::vector<Column>& columns) {
  if (columns.empty()) throw ConfigError("input_layer: no feature columns");
  std::vector<Node> blocks;
  for (const Column& c : columns) {
    switch (c->type) {
      case ColumnType::kNumeric:
        blocks.push_back(feature_input(g, c->key, {c->dim}));
        break;
      case ColumnType::kBucketized:
      case ColumnType::kHashed:
      case ColumnType::kCrossed:
      case ColumnType::kIndicator: {
        const Column cat = c->type == ColumnType::kIndicator ? c->source : c;
        blocks.push_back(g.add(std::make_shared<IndicatorOp>(cat), {}));
        break;
      }
      case ColumnType::kEmbedding: {
        Variable t = embedding_table(g, c->name(), c->id_space(), c->dimension);
        blocks.push_back(embedding_lookup(t.node(), c->source, c->combiner));
        break;
      }
      case ColumnType::kSharedEmbedding: {
        Variable t = embedding_table(g, c->shared_name, c->id_space(), c->dimension);
        for (const Column& s : c->sources) {
          blocks.push_back(embedding_lookup(t.node(), s, c->combiner));
        }
        break;
      }
    }
  }
  return concat(blocks, 1);
}

Node linear_model(Graph& g, const std::vector<Column>& columns, int64_t units) {
  if (columns.empty()) throw ConfigError("linear_model: no feature columns");
  if (units < 1) throw ConfigError("linear_model: units must be >= 1");
  VariableScope scope(g, "linear_model");
  std::optional<Node> sum;
  for (const Column& c : columns) {
    Node part;
    if (c->type == ColumnType::kEmbedding || c->type == ColumnType::kSharedEmbedding) {
      throw ConfigError("linear_model: embedding column '" + c->name() +
                        "' is not allowed on the linear path");
    }
    VariableScope col_scope(g, c->name());
    if (c->type == ColumnType::kNumeric) {
      Variable w = g.get_variable("weights", {c->dim, units}, init::zeros());
      part = matmul(feature_input(g, c->key, {c->dim}), w.node());
    } else {
      const Column cat = c->type == ColumnType::kIndicator ? c->source : c;
      Variable w = g.get_variable("weights", {cat->id_space(), units}, init::zeros());
      part = embedding_lookup(w.node(), cat, Combiner::kSum);
    }
    sum = sum ? add(*sum, part) : part;
  }
  Variable bias = g.get_variable("bias_weights", {units}, init::zeros());
  return add(*sum, bias.node());
}

}  // namespace est
