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

#include <string_view>
#include <vector>

#include "est/graph.hpp"

namespace est {

// Attributes for primitive(). Each kind reads only the fields it needs.
struct OpAttrs {
  int axis = -1;               // reduce_*, concat (-1: all / last)
  double rate = 0.0;           // dropout
  bool training = false;       // dropout
  int64_t depth = 0;           // one_hot
  int64_t pool = 2;            // max_pool2d
  int64_t stride = 1;          // max_pool2d
  std::vector<int64_t> dims;   // reshape
};

// Builds a node of the named primitive kind. Kinds: matmul, add, sub, mul,
// div, neg, relu, sigmoid, tanh, exp, log, abs, square, softplus, softmax,
// log_softmax, reduce_sum, reduce_mean, concat, reshape, one_hot, gather,
// conv2d, max_pool2d, dropout, argmax, equal.
Node primitive(std::string_view kind, std::vector<Node> inputs,
               const OpAttrs& attrs = {});
// All kinds accepted by primitive().
const std::vector<std::string_view>& primitive_kinds();

Node matmul(Node a, Node b);
Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);
Node div(Node a, Node b);
// a / b, with 0 wherever b == 0.
Node div_no_nan(Node a, Node b);
Node neg(Node x);
Node relu(Node x);
Node sigmoid(Node x);
Node tanh(Node x);
Node exp(Node x);
Node log(Node x);
Node abs(Node x);
Node square(Node x);
Node softplus(Node x);
Node softmax(Node x);
Node log_softmax(Node x);
// axis < 0 reduces over every element to a scalar.
Node reduce_sum(Node x, int axis = -1);
Node reduce_mean(Node x, int axis = -1);
Node concat(std::vector<Node> xs, int axis = -1);
Node reshape(Node x, std::vector<int64_t> dims);
Node one_hot(Node indices, int64_t depth);
Node gather(Node table, Node indices);
Node conv2d(Node input, Node kernel);
Node max_pool2d(Node input, int64_t pool, int64_t stride);
Node dropout(Node x, double rate, bool training);
// Index of the largest entry along the last axis; ties go to the lowest.
Node argmax(Node x);
// 1 where a == b elementwise, else 0.
Node equal(Node a, Node b);

// Dense feature `name` with per-example shape `dims`, read from the fed
// Features (a named tensor, or per-example dense/integral values).
Node feature_input(Graph& g, const std::string& name, std::vector<int64_t> dims);
// Label tensor `name` with per-example shape `dims`, read from the fed Labels.
Node label_input(Graph& g, const std::string& name, std::vector<int64_t> dims);

inline Node operator+(Node a, Node b) { return add(a, b); }
inline Node operator-(Node a, Node b) { return sub(a, b); }
inline Node operator*(Node a, Node b) { return mul(a, b); }
inline Node operator-(Node a) { return neg(a); }

}  // namespace est
