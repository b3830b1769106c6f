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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "est/feature_columns.hpp"
#include "est/ops.hpp"
#include "support/grad_check.hpp"

namespace est {
namespace {

// Reference FNV-1a 64, written from the published constants.
uint64_t reference_fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < s.size(); ++i) {
    h = h ^ static_cast<uint8_t>(s[i]);
    h = h * 1099511628211ULL;
  }
  return h;
}

std::string random_string(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<int> ch(32, 126);
  std::string s(static_cast<size_t>(len(rng)), ' ');
  for (char& c : s) c = static_cast<char>(ch(rng));
  return s;
}

Features batch(std::vector<Example> examples) {
  Features f;
  f.examples = std::move(examples);
  return f;
}

Tensor run(Graph& g, Node n, const Features& f) {
  Feed feed;
  feed.features = &f;
  return Session(g).run(n, feed);
}

TEST(Hash, SingleBucketIsZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(hash_bucket(random_string(rng), 1), 0);
}

TEST(Hash, MatchesReferenceFnv) {
  EXPECT_EQ(hash_bucket("query=apple", 100),
            static_cast<int64_t>(reference_fnv1a("query=apple") % 100));
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(reference_fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(reference_fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_string(rng);
    EXPECT_EQ(hash_bucket(s, 977), static_cast<int64_t>(reference_fnv1a(s) % 977));
  }
}

TEST(Hash, EqualStringsEqualBuckets) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_string(rng);
    EXPECT_EQ(hash_bucket(s, 1000), hash_bucket(std::string(s), 1000));
  }
}

TEST(Hash, Distributes) {
  std::mt19937_64 rng(4);
  std::vector<int> load(1000, 0);
  for (int i = 0; i < 100000; ++i) ++load[static_cast<size_t>(hash_bucket(random_string(rng), 1000))];
  const int max_load = *std::max_element(load.begin(), load.end());
  EXPECT_LT(max_load, 3 * 100);
}

TEST(Cross, SingleCombination) {
  const auto ids = cross({{"a"}, {"b"}}, 1000);
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(ids[0], static_cast<int64_t>(reference_fnv1a(std::string("a\x1F") + "b") % 1000));
}

TEST(Cross, ProductSizeAndOrder) {
  const auto ids = cross({{"a", "b"}, {"x"}}, 1000);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], hash_bucket("a\x1Fx", 1000));
  EXPECT_EQ(ids[1], hash_bucket("b\x1Fx", 1000));
  EXPECT_EQ(cross({{"a", "b"}, {"x", "y"}, {"p", "q", "r"}}, 50).size(), 12u);
  // Declared order matters.
  EXPECT_EQ(cross({{"x"}, {"a"}}, 1u << 30)[0], hash_bucket("x\x1F" "a", 1u << 30));
}

TEST(Cross, EmptyParentGivesEmpty) {
  EXPECT_TRUE(cross({{"a"}, {}}, 10).empty());
  EXPECT_TRUE(cross({{}, {"a", "b"}}, 10).empty());
}

TEST(InputLayer, NumericPassthrough) {
  Graph g;
  Node x = input_layer(g, {numeric_column("x", 2)});
  Features f = batch({Example{{{"x", FeatureValue::Dense{1.5, 2.5}}}}});
  EXPECT_EQ(run(g, x, f), Tensor::matrix({{1.5, 2.5}}));
}

TEST(InputLayer, NumericFromNamedTensor) {
  Graph g;
  Node x = input_layer(g, {numeric_column("x", 2)});
  Features f;
  f.tensors["x"] = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(run(g, x, f), Tensor::matrix({{1, 2}, {3, 4}}));
}

Tensor table_values(int64_t rows, int64_t dim, std::mt19937_64& rng) {
  return testing::random_tensor({rows, dim}, rng);
}

TEST(InputLayer, EmbeddingSingleCategoryIsTableRow) {
  for (Combiner comb : {Combiner::kMean, Combiner::kSum, Combiner::kSqrtn}) {
    Graph g;
    auto cat = categorical_column_with_hash_bucket("q", 10);
    Node x = input_layer(g, {embedding_column(cat, 2, comb)});
    Variable t = *g.find_variable("q_embedding/embedding_weights");
    Tensor tv(Shape{10, 2});
    const auto b = static_cast<size_t>(hash_bucket("apple", 10));
    tv[b * 2] = 0.1;
    tv[b * 2 + 1] = 0.2;
    t.assign(tv);
    Features f = batch({Example{{{"q", "apple"}}}});
    EXPECT_EQ(run(g, x, f), Tensor::matrix({{0.1, 0.2}}));
  }
}

TEST(InputLayer, MultiValuedCombinersMatchGatherOracle) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> vals{"red", "green", "blue"};
  for (Combiner comb : {Combiner::kMean, Combiner::kSum, Combiner::kSqrtn}) {
    Graph g;
    auto cat = categorical_column_with_hash_bucket("c", 7);
    Node x = input_layer(g, {embedding_column(cat, 3, comb)});
    Variable t = *g.find_variable("c_embedding/embedding_weights");
    const Tensor tv = table_values(7, 3, rng);
    t.assign(tv);
    Features f = batch({Example{{{"c", FeatureValue::Categorical(vals)}}},
                        Example{{{"c", FeatureValue::Categorical{"red", "blue"}}}}});
    const Tensor out = run(g, x, f);
    // Oracle: explicit gather then reduce.
    for (size_t r = 0; r < 2; ++r) {
      const auto& ex = f.examples[r].features.at("c").categorical();
      for (size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (const auto& v : ex) s += tv.at(hash_bucket(v, 7), static_cast<int64_t>(j));
        const double n = static_cast<double>(ex.size());
        const double want = comb == Combiner::kSum ? s
                            : comb == Combiner::kMean ? s / n
                                                      : s / std::sqrt(n);
        EXPECT_NEAR(out.at(static_cast<int64_t>(r), static_cast<int64_t>(j)), want, 1e-15);
      }
    }
  }
}

TEST(InputLayer, EmptyCategoricalGivesZeroBlocks) {
  Graph g;
  auto cat = categorical_column_with_hash_bucket("c", 5);
  Node x = input_layer(g, {embedding_column(cat, 3), indicator_column(cat)});
  Features f = batch({Example{{{"c", FeatureValue::Categorical{}}}}});
  EXPECT_EQ(run(g, x, f), Tensor(Shape{1, 8}));
}

TEST(InputLayer, AbsentFeatureIsError) {
  Graph g;
  Node x = input_layer(g, {embedding_column(categorical_column_with_hash_bucket("c", 5), 2)});
  Features f = batch({Example{{{"other", "v"}}}});
  EXPECT_THROW(run(g, x, f), ExecutionError);
  Graph g2;
  Node y = input_layer(g2, {numeric_column("n", 2)});
  Features f2 = batch({Example{{{"n", FeatureValue::Dense{1, 2, 3}}}}});
  EXPECT_THROW(run(g2, y, f2), ExecutionError);
}

TEST(InputLayer, IndicatorAndBucketized) {
  Graph g;
  auto num = numeric_column("age", 1);
  auto b = bucketized_column(num, {18, 35, 65});
  Node x = input_layer(g, {b, indicator_column(categorical_column_with_hash_bucket("c", 3))});
  Features f = batch({Example{{{"age", 10.0}, {"c", FeatureValue::Categorical{"u", "u"}}}},
                      Example{{{"age", 35.0}, {"c", "w"}}},
                      Example{{{"age", 99.0}, {"c", FeatureValue::Integral{4}}}}});
  const Tensor out = run(g, x, f);
  EXPECT_EQ(out.shape(), (Shape{3, 7}));
  EXPECT_EQ(out.row(0).raw()[0], 1.0);
  EXPECT_EQ(out.row(1).raw()[2], 1.0);  // boundary value goes to the upper bucket
  EXPECT_EQ(out.row(2).raw()[3], 1.0);
  EXPECT_EQ(out.at(0, 4 + hash_bucket("u", 3)), 2.0);
  EXPECT_EQ(out.at(2, 4 + hash_bucket("4", 3)), 1.0);
}

TEST(InputLayer, WidthIsSumOfColumnDims) {
  Graph g;
  auto q = categorical_column_with_hash_bucket("q", 11);
  std::vector<Column> cols{numeric_column("n", 3), embedding_column(q, 4),
                           indicator_column(crossed_column({"q", "d"}, 13)),
                           bucketized_column(numeric_column("m", 2), {0.0})};
  int64_t sum = 0;
  for (const auto& c : cols) sum += c->output_dim();
  EXPECT_EQ(sum, 3 + 4 + 13 + 4);
  Node x = input_layer(g, cols);
  EXPECT_EQ(x.shape(), (Shape{Shape::kUnknown, sum}));
  Features f = batch({Example{{{"n", FeatureValue::Dense{1, 2, 3}},
                               {"q", FeatureValue::Categorical{}},
                               {"d", "z"},
                               {"m", FeatureValue::Dense{-1, 1}}}}});
  EXPECT_EQ(run(g, x, f).shape(), (Shape{1, sum}));
}

TEST(InputLayer, ColumnOrderPermutesBlocks) {
  Features f = batch({Example{{{"a", FeatureValue::Dense{1, 2}}, {"b", 7.0}}}});
  Graph g1;
  Tensor ab = run(g1, input_layer(g1, {numeric_column("a", 2), numeric_column("b")}), f);
  Graph g2;
  Tensor ba = run(g2, input_layer(g2, {numeric_column("b"), numeric_column("a", 2)}), f);
  EXPECT_EQ(ab, Tensor::matrix({{1, 2, 7}}));
  EXPECT_EQ(ba, Tensor::matrix({{7, 1, 2}}));
}

TEST(InputLayer, SharedEmbeddingUsesOneVariable) {
  Graph g;
  auto a = categorical_column_with_hash_bucket("a", 6);
  auto b = categorical_column_with_hash_bucket("b", 6);
  const size_t before = g.variables().size();
  Node x = input_layer(g, {shared_embedding_columns({a, b}, 2, "shared")});
  EXPECT_EQ(g.variables().size(), before + 1);
  Variable t = *g.find_variable("shared/embedding_weights");
  Tensor tv(Shape{6, 2});
  for (size_t i = 0; i < tv.size(); ++i) tv[i] = static_cast<double>(i);
  t.assign(tv);
  Features f = batch({Example{{{"a", "same"}, {"b", "same"}}}});
  Tensor out = run(g, x, f);
  EXPECT_EQ(out.at(0, 0), out.at(0, 2));
  EXPECT_EQ(out.at(0, 1), out.at(0, 3));
  // Mutation is seen through both halves.
  tv[static_cast<size_t>(hash_bucket("same", 6)) * 2] = 100;
  t.assign(tv);
  out = run(g, x, f);
  EXPECT_EQ(out.at(0, 0), 100);
  EXPECT_EQ(out.at(0, 2), 100);
  // A second input_layer in the same graph reuses the table.
  input_layer(g, {shared_embedding_columns({a, b}, 2, "shared")});
  EXPECT_EQ(g.variables().size(), before + 1);
}

TEST(InputLayer, EmbeddingGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (Combiner comb : {Combiner::kMean, Combiner::kSum, Combiner::kSqrtn}) {
    Graph g;
    auto q = categorical_column_with_hash_bucket("q", 5);
    Node x = input_layer(g, {embedding_column(q, 3, comb), numeric_column("n", 1)});
    Node w = g.constant(testing::random_tensor({4, 1}, rng, 0.5, 1.5, 0.0));
    Node loss = reduce_sum(matmul(tanh(x), w));
    Variable t = *g.find_variable("q_embedding/embedding_weights");
    Features f = batch({Example{{{"q", FeatureValue::Categorical{"a", "b", "c"}}, {"n", 1.0}}},
                        Example{{{"q", FeatureValue::Categorical{"a"}}, {"n", 2.0}}},
                        Example{{{"q", FeatureValue::Categorical{}}, {"n", 3.0}}}});
    Feed feed;
    feed.features = &f;
    const auto r = testing::check_gradients(loss, {t}, feed);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
  }
}

TEST(LinearModel, ZeroWeightsGiveZeroLogits) {
  Graph g;
  Node logits = linear_model(g, {numeric_column("n", 2), categorical_column_with_hash_bucket("c", 4)}, 3);
  Features f = batch({Example{{{"n", FeatureValue::Dense{1, 2}}, {"c", "v"}}}});
  EXPECT_EQ(run(g, logits, f), Tensor(Shape{1, 3}));
}

TEST(LinearModel, SingleLookupIsRowPlusBias) {
  Graph g;
  auto c = categorical_column_with_hash_bucket("c", 4);
  Node logits = linear_model(g, {c}, 2);
  Variable w = *g.find_variable("linear_model/c/weights");
  Variable b = *g.find_variable("linear_model/bias_weights");
  Tensor wv(Shape{4, 2});
  const auto id = static_cast<size_t>(hash_bucket("v", 4));
  wv[id * 2] = 0.5;
  wv[id * 2 + 1] = -1.5;
  w.assign(wv);
  b.assign(Tensor::vector({0.25, 0.75}));
  Features f = batch({Example{{{"c", "v"}}}});
  EXPECT_EQ(run(g, logits, f), Tensor::matrix({{0.75, -0.75}}));
}

TEST(LinearModel, TwoActiveBucketsSumRows) {
  std::mt19937_64 rng(10);
  Graph g;
  auto c = categorical_column_with_hash_bucket("c", 50);
  auto x = crossed_column({"c", "d"}, 30);
  Node logits = linear_model(g, {c, x}, 2);
  const Tensor wc = testing::random_tensor({50, 2}, rng);
  const Tensor wx = testing::random_tensor({30, 2}, rng);
  const Tensor bias = testing::random_tensor({2}, rng);
  g.find_variable("linear_model/c/weights")->assign(wc);
  g.find_variable("linear_model/c_X_d/weights")->assign(wx);
  g.find_variable("linear_model/bias_weights")->assign(bias);
  Features f = batch({Example{{{"c", "p"}, {"d", "q"}}}});
  const Tensor out = run(g, logits, f);
  const int64_t ic = hash_bucket("p", 50);
  const int64_t ix = hash_bucket("p\x1Fq", 30);
  for (int64_t j = 0; j < 2; ++j) {
    const double want = wc.at(ic, j) + wx.at(ix, j) + bias[static_cast<size_t>(j)];
    EXPECT_DOUBLE_EQ(out.at(0, j), want);
  }
}

TEST(LinearModel, RejectsEmbeddings) {
  Graph g;
  auto c = categorical_column_with_hash_bucket("c", 4);
  EXPECT_THROW(linear_model(g, {embedding_column(c, 2)}, 1), ConfigError);
  EXPECT_THROW(linear_model(g, {shared_embedding_columns({c}, 2, "s")}, 1), ConfigError);
}

TEST(Column, ConstructorValidation) {
  EXPECT_THROW(categorical_column_with_hash_bucket("c", 0), ConfigError);
  EXPECT_THROW(crossed_column({"a"}, 10), ConfigError);
  EXPECT_THROW(bucketized_column(numeric_column("n"), {1, 1}), ConfigError);
  EXPECT_THROW(embedding_column(numeric_column("n"), 2), ConfigError);
  EXPECT_THROW(embedding_column(categorical_column_with_hash_bucket("c", 2), 0), ConfigError);
  EXPECT_THROW(numeric_column("n", 0), ConfigError);
  EXPECT_THROW(combiner_from_name("max"), ConfigError);
}

TEST(ColumnJson, RoundTrip) {
  const auto spec = nlohmann::json::parse(R"([
    {"type": "numeric", "name": "age", "dim": 1},
    {"type": "bucketized", "source": "age", "boundaries": [18, 35]},
    {"type": "hashed", "name": "query", "num_buckets": 100},
    {"type": "crossed", "names": ["query", "docid"], "num_buckets": 1000},
    {"type": "embedding", "column": "query", "dimension": 8, "combiner": "sqrtn"},
    {"type": "indicator", "column": {"type": "hashed", "name": "docid", "num_buckets": 10}},
    {"type": "shared_embedding", "columns": ["query", "docid"], "dimension": 4,
     "shared_name": "qd"}
  ])");
  const auto cols = columns_from_json(spec);
  ASSERT_EQ(cols.size(), 7u);
  EXPECT_EQ(cols[1]->name(), "age_bucketized");
  EXPECT_EQ(cols[4]->combiner, Combiner::kSqrtn);
  EXPECT_EQ(cols[4]->source, cols[2]);
  EXPECT_EQ(cols[6]->output_dim(), 8);
  const auto again = columns_from_json(columns_to_json(cols));
  EXPECT_EQ(columns_to_json(again), columns_to_json(cols));
}

TEST(ColumnJson, FieldLevelErrors) {
  auto msg = [](const char* text) {
    try {
      columns_from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(msg(R"([{"type": "hashed", "name": "q"}])").find("num_buckets"), std::string::npos);
  EXPECT_NE(msg(R"([{"type": "weird"}])").find("weird"), std::string::npos);
  EXPECT_NE(msg(R"([{"type": "embedding", "column": "nope"}])").find("nope"), std::string::npos);
  EXPECT_NE(msg(R"([{"type": "hashed", "name": "q", "num_buckets": "x"}])").find("num_buckets"),
            std::string::npos);
}

}  // namespace
}  // namespace est
