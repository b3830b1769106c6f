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

#include "est/model_fn.hpp"

#include "est/ops.hpp"

namespace est {

Node FeatureInputs::dense(const std::string& name, std::vector<int64_t> dims) const {
  return feature_input(*graph_, name, std::move(dims));
}

Node LabelInputs::get(const std::string& name, std::vector<int64_t> dims) const {
  if (!present_) throw GraphError("labels are not available (PREDICT mode)");
  return label_input(*graph_, name, std::move(dims));
}

void EstimatorSpec::validate() const {
  const std::string m(mode_name(mode));
  auto fail = [&](const std::string& what) {
    throw GraphError("EstimatorSpec for mode " + m + ": " + what);
  };
  if (loss && !loss->shape().is_scalar()) {
    fail("loss must be a scalar, got " + loss->shape().to_string());
  }
  switch (mode) {
    case Mode::kTrain:
      if (!loss) fail("missing loss");
      if (!train_op) fail("missing train_op");
      if (!eval_metrics.empty()) fail("eval_metrics are only allowed in EVAL");
      break;
    case Mode::kEval:
      if (!loss) fail("missing loss");
      if (train_op) fail("train_op is only allowed in TRAIN");
      break;
    case Mode::kPredict:
      if (predictions.empty()) fail("missing predictions");
      if (loss) fail("loss is not allowed in PREDICT");
      if (train_op) fail("train_op is only allowed in TRAIN");
      if (!eval_metrics.empty()) fail("eval_metrics are only allowed in EVAL");
      break;
  }
}

std::map<std::string, Shape> signature_of(const std::map<std::string, Node>& predictions) {
  std::map<std::string, Shape> out;
  for (const auto& [name, node] : predictions) {
    const auto& d = node.shape().dims();
    out[name] = d.empty() ? Shape{} : Shape(std::vector<int64_t>(d.begin() + 1, d.end()));
  }
  return out;
}

}  // namespace est
