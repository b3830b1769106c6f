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
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "est/example.hpp"
#include "est/graph.hpp"
#include "json.hpp"

namespace est {

// FNV-1a 64 over the bytes of `value`, modulo `num_buckets`.
int64_t hash_bucket(std::string_view value, int64_t num_buckets);

// Hashed Cartesian product of the parents' values, each combination joined
// in parent order with the byte 0x1F.
std::vector<int64_t> cross(const std::vector<std::vector<std::string>>& parents,
                           int64_t num_buckets);

enum class ColumnType {
  kNumeric,
  kBucketized,
  kHashed,
  kCrossed,
  kEmbedding,
  kIndicator,
  kSharedEmbedding,
};

enum class Combiner { kMean, kSum, kSqrtn };

Combiner combiner_from_name(const std::string& name);
std::string combiner_name(Combiner c);

class FeatureColumn;
using Column = std::shared_ptr<const FeatureColumn>;

// Immutable description of how one raw feature becomes model input. Build
// with the factory functions below.
class FeatureColumn {
 public:
  ColumnType type;
  // numeric / hashed: feature key. Derived for the other kinds.
  std::string key;
  int64_t dim = 1;                  // numeric
  std::vector<double> boundaries;   // bucketized
  int64_t num_buckets = 0;          // hashed, crossed
  std::vector<std::string> keys;    // crossed
  Column source;                    // bucketized (numeric), embedding/indicator
  std::vector<Column> sources;      // shared_embedding
  int64_t dimension = 0;            // embedding, shared_embedding
  Combiner combiner = Combiner::kMean;
  std::string shared_name;          // shared_embedding

  // Unique, human-readable name used for variable scopes.
  std::string name() const;
  // Width of this column's block in input_layer.
  int64_t output_dim() const;
  bool is_categorical() const;
  // Id space of a categorical column.
  int64_t id_space() const;
  // Raw feature keys this column reads.
  std::vector<std::string> input_keys() const;
  // Category ids of one example (categorical columns only).
  std::vector<int64_t> ids(const Example& example) const;

  nlohmann::json to_json() const;
};

Column numeric_column(const std::string& key, int64_t dim = 1);
Column bucketized_column(Column source, std::vector<double> boundaries);
Column categorical_column_with_hash_bucket(const std::string& key, int64_t num_buckets);
Column crossed_column(std::vector<std::string> keys, int64_t num_buckets);
Column indicator_column(Column categorical);
Column embedding_column(Column categorical, int64_t dimension,
                        Combiner combiner = Combiner::kMean);
// One embedding table, keyed by `shared_name`, used by every categorical
// column in `categoricals`. The block is their embeddings concatenated.
Column shared_embedding_columns(std::vector<Column> categoricals, int64_t dimension,
                                const std::string& shared_name,
                                Combiner combiner = Combiner::kMean);

// Feature-spec JSON: a list of column objects, or one column object.
Column column_from_json(const nlohmann::json& j);
std::vector<Column> columns_from_json(const nlohmann::json& j);
nlohmann::json columns_to_json(const std::vector<Column>& columns);

// Dense [batch, sum of output_dim] input built from the fed Features, blocks
// in column order. Embedding tables are "<column>/embedding_weights" (or
// "<shared_name>/embedding_weights") under the current scope, created or
// reused.
Node input_layer(Graph& g, const std::vector<Column>& columns);

// Weighted sum of the columns plus a bias, [batch, units]. Variables are
// "linear_model/<column>/weights" and "linear_model/bias_weights", zero
// initialized. Embedding columns are rejected.
Node linear_model(Graph& g, const std::vector<Column>& columns, int64_t units);

// Sum over the example's category ids of table rows, reduced by `combiner`,
// [batch, table_cols]. Empty id lists give zero rows.
Node embedding_lookup(Node table, Column categorical, Combiner combiner);

}  // namespace est
