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

#include "est/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

namespace est {
namespace {

using Inputs = std::span<const Tensor* const>;
using Grads = std::vector<std::optional<Tensor>>;

[[noreturn]] void shape_error(std::string_view op, const Shape& a,
                              const Shape& b) {
  throw GraphError(std::string(op) + ": incompatible shapes " + a.to_string() +
                   " and " + b.to_string());
}

int64_t merge_dim(int64_t a, int64_t b) { return a >= 0 ? a : b; }

// ---------------------------------------------------------------------------
// Elementwise binary ops with suffix broadcasting: the lower-rank operand's
// shape must match the trailing dims of the other one (a scalar always does).

Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  const Shape& big = a.rank() >= b.rank() ? a : b;
  const Shape& small = a.rank() >= b.rank() ? b : a;
  const size_t off = big.rank() - small.rank();
  std::vector<int64_t> out = big.dims();
  for (size_t i = 0; i < small.rank(); ++i) {
    const int64_t x = big[off + i];
    const int64_t y = small[i];
    if (x >= 0 && y >= 0 && x != y) shape_error(op, a, b);
    out[off + i] = merge_dim(x, y);
  }
  return Shape(std::move(out));
}

void check_runtime_broadcast(std::string_view op, const Tensor& a,
                             const Tensor& b) {
  const Tensor& big = a.rank() >= b.rank() ? a : b;
  const Tensor& small = a.rank() >= b.rank() ? b : a;
  const size_t off = big.rank() - small.rank();
  for (size_t i = 0; i < small.rank(); ++i) {
    if (big.shape()[off + i] != small.shape()[i]) {
      throw ExecutionError(std::string(op) + ": incompatible shapes " +
                           a.shape().to_string() + " and " +
                           b.shape().to_string());
    }
  }
}

// Sums `g` (shape of the broadcast output) down to `target`'s shape.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const size_t n = out.size();
  if (n == 0) return out;
  for (size_t i = 0; i < g.size(); ++i) out[i % n] += g[i];
  return out;
}

class BinaryOp : public Op {
 public:
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 2) throw GraphError(std::string(type()) + " takes 2 inputs");
    return broadcast_shape(type(), in[0], in[1]);
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    check_runtime_broadcast(type(), a, b);
    const bool a_big = a.rank() >= b.rank();
    Tensor out(a_big ? a.shape() : b.shape());
    const size_t na = a.size();
    const size_t nb = b.size();
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = apply(a[na == out.size() ? i : i % na],
                     b[nb == out.size() ? i : i % nb]);
    }
    return out;
  }

 protected:
  virtual double apply(double a, double b) const = 0;
};

class AddOp final : public BinaryOp {
 public:
  std::string_view type() const override { return "add"; }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    return {reduce_to(g, in[0]->shape()), reduce_to(g, in[1]->shape())};
  }

 protected:
  double apply(double a, double b) const override { return a + b; }
};

class SubOp final : public BinaryOp {
 public:
  std::string_view type() const override { return "sub"; }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    Tensor gb = reduce_to(g, in[1]->shape());
    for (double& v : gb.values()) v = -v;
    return {reduce_to(g, in[0]->shape()), std::move(gb)};
  }

 protected:
  double apply(double a, double b) const override { return a - b; }
};

// Gradient helper for mul/div: elementwise product of g with f(a_i, b_i).
template <typename F>
Tensor broadcast_grad(const Tensor& g, const Tensor& a, const Tensor& b,
                      const Shape& target, F f) {
  Tensor full(g.shape());
  const size_t na = a.size();
  const size_t nb = b.size();
  for (size_t i = 0; i < g.size(); ++i) {
    full[i] = g[i] * f(a[na == g.size() ? i : i % na],
                       b[nb == g.size() ? i : i % nb]);
  }
  return reduce_to(full, target);
}

class MulOp final : public BinaryOp {
 public:
  std::string_view type() const override { return "mul"; }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    return {broadcast_grad(g, a, b, a.shape(), [](double, double y) { return y; }),
            broadcast_grad(g, a, b, b.shape(), [](double x, double) { return x; })};
  }

 protected:
  double apply(double a, double b) const override { return a * b; }
};

class DivOp final : public BinaryOp {
 public:
  explicit DivOp(bool no_nan) : no_nan_(no_nan) {}
  std::string_view type() const override { return no_nan_ ? "div_no_nan" : "div"; }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const bool nn = no_nan_;
    return {broadcast_grad(g, a, b, a.shape(),
                           [nn](double, double y) {
                             return (nn && y == 0) ? 0.0 : 1.0 / y;
                           }),
            broadcast_grad(g, a, b, b.shape(), [nn](double x, double y) {
              return (nn && y == 0) ? 0.0 : -x / (y * y);
            })};
  }

 protected:
  double apply(double a, double b) const override {
    if (no_nan_ && b == 0) return 0.0;
    return a / b;
  }

 private:
  bool no_nan_;
};

class EqualOp final : public BinaryOp {
 public:
  std::string_view type() const override { return "equal"; }
  Grads backward(Inputs, const Tensor&, const Tensor&,
                 ExecContext&) const override {
    return {std::nullopt, std::nullopt};
  }

 protected:
  double apply(double a, double b) const override { return a == b ? 1.0 : 0.0; }
};

// ---------------------------------------------------------------------------
// Elementwise unary ops.

class UnaryOp : public Op {
 public:
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1) throw GraphError(std::string(type()) + " takes 1 input");
    return in[0];
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    Tensor out = *in[0];
    for (double& v : out.values()) v = f(v);
    return out;
  }
  Grads backward(Inputs in, const Tensor& out, const Tensor& g,
                 ExecContext&) const override {
    Tensor d(g.shape());
    for (size_t i = 0; i < g.size(); ++i) d[i] = g[i] * df((*in[0])[i], out[i]);
    return {std::move(d)};
  }

 protected:
  virtual double f(double x) const = 0;
  // Derivative given the input x and the output y = f(x).
  virtual double df(double x, double y) const = 0;
};

#define EST_UNARY_OP(Class, name, fexpr, dfexpr)                  \
  class Class final : public UnaryOp {                            \
   public:                                                        \
    std::string_view type() const override { return name; }       \
                                                                  \
   protected:                                                     \
    double f(double x) const override { return fexpr; }           \
    double df([[maybe_unused]] double x, [[maybe_unused]] double y) const override { \
      return dfexpr;                                              \
    }                                                             \
  };

EST_UNARY_OP(NegOp, "neg", -x, -1.0)
EST_UNARY_OP(ReluOp, "relu", x > 0 ? x : 0.0, x > 0 ? 1.0 : 0.0)
EST_UNARY_OP(SigmoidOp, "sigmoid",
             x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x)),
             y * (1.0 - y))
EST_UNARY_OP(TanhOp, "tanh", std::tanh(x), 1.0 - y * y)
EST_UNARY_OP(ExpOp, "exp", std::exp(x), y)
EST_UNARY_OP(LogOp, "log", std::log(x), 1.0 / x)
EST_UNARY_OP(AbsOp, "abs", std::fabs(x), x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0))
EST_UNARY_OP(SquareOp, "square", x * x, 2.0 * x)
EST_UNARY_OP(SoftplusOp, "softplus",
             std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))),
             x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x)))

#undef EST_UNARY_OP

// ---------------------------------------------------------------------------

class MatMulOp final : public Op {
 public:
  std::string_view type() const override { return "matmul"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 2 || in[0].rank() != 2 || in[1].rank() != 2) {
      throw GraphError("matmul: expects two rank-2 inputs, got " +
                       (in.empty() ? std::string("none")
                                   : in[0].to_string() +
                                         (in.size() > 1 ? " and " + in[1].to_string()
                                                        : std::string())));
    }
    if (in[0][1] >= 0 && in[1][0] >= 0 && in[0][1] != in[1][0]) {
      shape_error("matmul", in[0], in[1]);
    }
    return Shape{in[0][0], in[1][1]};
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const int64_t m = a.shape()[0];
    const int64_t k = a.shape()[1];
    const int64_t n = b.shape()[1];
    if (b.shape()[0] != k) {
      throw ExecutionError("matmul: incompatible shapes " + a.shape().to_string() +
                           " and " + b.shape().to_string());
    }
    Tensor out(Shape{m, n});
    for (int64_t i = 0; i < m; ++i) {
      double* orow = &out[static_cast<size_t>(i * n)];
      for (int64_t p = 0; p < k; ++p) {
        const double av = a[static_cast<size_t>(i * k + p)];
        if (av == 0.0) continue;
        const double* brow = &b[static_cast<size_t>(p * n)];
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const int64_t m = a.shape()[0];
    const int64_t k = a.shape()[1];
    const int64_t n = b.shape()[1];
    Tensor ga(a.shape());
    Tensor gb(b.shape());
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        double acc = 0;
        for (int64_t j = 0; j < n; ++j) {
          acc += g[static_cast<size_t>(i * n + j)] * b[static_cast<size_t>(p * n + j)];
        }
        ga[static_cast<size_t>(i * k + p)] = acc;
      }
    }
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        const double av = a[static_cast<size_t>(i * k + p)];
        if (av == 0.0) continue;
        for (int64_t j = 0; j < n; ++j) {
          gb[static_cast<size_t>(p * n + j)] += av * g[static_cast<size_t>(i * n + j)];
        }
      }
    }
    return {std::move(ga), std::move(gb)};
  }
};

// Softmax / log-softmax over the last axis.
class SoftmaxOp final : public Op {
 public:
  explicit SoftmaxOp(bool log) : log_(log) {}
  std::string_view type() const override { return log_ ? "log_softmax" : "softmax"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1 || in[0].rank() < 1) {
      throw GraphError(std::string(type()) + ": expects one input of rank >= 1");
    }
    return in[0];
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& x = *in[0];
    Tensor out(x.shape());
    const auto n = static_cast<size_t>(x.shape().last());
    if (n == 0) return out;
    for (size_t r = 0; r < x.size() / n; ++r) {
      const double* xr = &x[r * n];
      double* yr = &out[r * n];
      const double mx = *std::max_element(xr, xr + n);
      double sum = 0;
      for (size_t j = 0; j < n; ++j) sum += std::exp(xr[j] - mx);
      const double lse = mx + std::log(sum);
      for (size_t j = 0; j < n; ++j) {
        yr[j] = log_ ? xr[j] - lse : std::exp(xr[j] - lse);
      }
    }
    return out;
  }
  Grads backward(Inputs, const Tensor& y, const Tensor& g,
                 ExecContext&) const override {
    Tensor d(y.shape());
    const auto n = static_cast<size_t>(y.shape().last());
    if (n == 0) return {std::move(d)};
    for (size_t r = 0; r < y.size() / n; ++r) {
      if (log_) {
        double gsum = 0;
        for (size_t j = 0; j < n; ++j) gsum += g[r * n + j];
        for (size_t j = 0; j < n; ++j) {
          d[r * n + j] = g[r * n + j] - std::exp(y[r * n + j]) * gsum;
        }
      } else {
        double dot = 0;
        for (size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (size_t j = 0; j < n; ++j) {
          d[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
        }
      }
    }
    return {std::move(d)};
  }

 private:
  bool log_;
};

class ReduceOp final : public Op {
 public:
  ReduceOp(bool mean, int axis) : mean_(mean), axis_(axis) {}
  std::string_view type() const override { return mean_ ? "reduce_mean" : "reduce_sum"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1) throw GraphError(std::string(type()) + " takes 1 input");
    if (axis_ < 0) return Shape{};
    if (static_cast<size_t>(axis_) >= in[0].rank()) {
      throw GraphError(std::string(type()) + ": axis " + std::to_string(axis_) +
                       " out of range for shape " + in[0].to_string());
    }
    std::vector<int64_t> d = in[0].dims();
    d.erase(d.begin() + axis_);
    return Shape(std::move(d));
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& x = *in[0];
    if (axis_ < 0) {
      double s = 0;
      for (double v : x.values()) s += v;
      if (mean_ && x.size() > 0) s /= static_cast<double>(x.size());
      return Tensor::scalar(s);
    }
    const auto [outer, len, inner] = split(x.shape());
    std::vector<int64_t> d = x.shape().dims();
    d.erase(d.begin() + axis_);
    Tensor out{Shape(std::move(d))};
    for (size_t o = 0; o < outer; ++o) {
      for (size_t l = 0; l < len; ++l) {
        for (size_t i = 0; i < inner; ++i) {
          out[o * inner + i] += x[(o * len + l) * inner + i];
        }
      }
    }
    if (mean_ && len > 0) {
      for (double& v : out.values()) v /= static_cast<double>(len);
    }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& x = *in[0];
    Tensor d(x.shape());
    if (axis_ < 0) {
      const double v = g.item() / (mean_ && x.size() ? static_cast<double>(x.size()) : 1.0);
      for (double& e : d.values()) e = v;
      return {std::move(d)};
    }
    const auto [outer, len, inner] = split(x.shape());
    const double scale = mean_ && len ? 1.0 / static_cast<double>(len) : 1.0;
    for (size_t o = 0; o < outer; ++o) {
      for (size_t l = 0; l < len; ++l) {
        for (size_t i = 0; i < inner; ++i) {
          d[(o * len + l) * inner + i] = g[o * inner + i] * scale;
        }
      }
    }
    return {std::move(d)};
  }

 private:
  std::tuple<size_t, size_t, size_t> split(const Shape& s) const {
    size_t outer = 1;
    size_t inner = 1;
    for (int i = 0; i < axis_; ++i) outer *= static_cast<size_t>(s[static_cast<size_t>(i)]);
    for (size_t i = static_cast<size_t>(axis_) + 1; i < s.rank(); ++i) {
      inner *= static_cast<size_t>(s[i]);
    }
    return {outer, static_cast<size_t>(s[static_cast<size_t>(axis_)]), inner};
  }

  bool mean_;
  int axis_;
};

class ConcatOp final : public Op {
 public:
  explicit ConcatOp(int axis) : axis_(axis) {}
  std::string_view type() const override { return "concat"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.empty()) throw GraphError("concat: no inputs");
    const size_t rank = in[0].rank();
    if (rank == 0) throw GraphError("concat: scalars cannot be concatenated");
    const size_t axis = resolve(rank);
    std::vector<int64_t> out = in[0].dims();
    for (size_t k = 1; k < in.size(); ++k) {
      if (in[k].rank() != rank) shape_error("concat", in[0], in[k]);
      for (size_t i = 0; i < rank; ++i) {
        if (i == axis) {
          out[i] = (out[i] >= 0 && in[k][i] >= 0) ? out[i] + in[k][i]
                                                   : Shape::kUnknown;
        } else {
          if (out[i] >= 0 && in[k][i] >= 0 && out[i] != in[k][i]) {
            shape_error("concat", in[0], in[k]);
          }
          out[i] = merge_dim(out[i], in[k][i]);
        }
      }
    }
    return Shape(std::move(out));
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const size_t rank = in[0]->rank();
    const size_t axis = resolve(rank);
    std::vector<int64_t> dims = in[0]->shape().dims();
    dims[axis] = 0;
    for (const Tensor* t : in) {
      for (size_t i = 0; i < rank; ++i) {
        if (i != axis && t->shape()[i] != in[0]->shape()[i]) {
          throw ExecutionError("concat: incompatible shapes " +
                               in[0]->shape().to_string() + " and " +
                               t->shape().to_string());
        }
      }
      dims[axis] += t->shape()[axis];
    }
    const size_t outer = outer_size(in[0]->shape(), axis);
    Tensor out{Shape(dims)};
    size_t pos = 0;
    for (size_t o = 0; o < outer; ++o) {
      for (const Tensor* t : in) {
        const size_t chunk = t->size() / std::max<size_t>(outer, 1);
        std::copy_n(&(*t)[o * chunk], chunk, &out[pos]);
        pos += chunk;
      }
    }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const size_t axis = resolve(in[0]->rank());
    const size_t outer = outer_size(in[0]->shape(), axis);
    Grads out;
    std::vector<Tensor> parts;
    for (const Tensor* t : in) parts.emplace_back(t->shape());
    size_t pos = 0;
    for (size_t o = 0; o < outer; ++o) {
      for (auto& p : parts) {
        const size_t chunk = p.size() / std::max<size_t>(outer, 1);
        std::copy_n(&g[pos], chunk, &p[o * chunk]);
        pos += chunk;
      }
    }
    for (auto& p : parts) out.emplace_back(std::move(p));
    return out;
  }

 private:
  size_t resolve(size_t rank) const {
    const int a = axis_ < 0 ? static_cast<int>(rank) + axis_ : axis_;
    if (a < 0 || static_cast<size_t>(a) >= rank) {
      throw GraphError("concat: axis " + std::to_string(axis_) + " out of range");
    }
    return static_cast<size_t>(a);
  }
  static size_t outer_size(const Shape& s, size_t axis) {
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
    return outer;
  }

  int axis_;
};

class ReshapeOp final : public Op {
 public:
  explicit ReshapeOp(std::vector<int64_t> dims) : dims_(std::move(dims)) {}
  std::string_view type() const override { return "reshape"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1) throw GraphError("reshape takes 1 input");
    int inferred = 0;
    int64_t known = 1;
    for (int64_t d : dims_) {
      if (d < 0) {
        ++inferred;
      } else {
        known *= d;
      }
    }
    if (inferred > 1) throw GraphError("reshape: at most one -1 dim");
    if (in[0].fully_defined()) {
      const int64_t n = in[0].num_elements();
      if (inferred == 0 ? n != known : (known == 0 || n % known != 0)) {
        throw GraphError("reshape: cannot reshape " + in[0].to_string() + " to " +
                         Shape(dims_).to_string());
      }
      std::vector<int64_t> out = dims_;
      for (auto& d : out) {
        if (d < 0) d = n / known;
      }
      return Shape(std::move(out));
    }
    if (inferred == 0) {
      throw GraphError("reshape: input shape " + in[0].to_string() +
                       " is not fully defined; use -1 for the unknown dim");
    }
    return Shape(dims_);
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    try {
      return in[0]->reshaped(Shape(dims_));
    } catch (const Error& e) {
      throw ExecutionError(e.what());
    }
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    return {Tensor(in[0]->shape(), g.raw())};
  }

 private:
  std::vector<int64_t> dims_;
};

class OneHotOp final : public Op {
 public:
  explicit OneHotOp(int64_t depth) : depth_(depth) {
    if (depth < 1) throw GraphError("one_hot: depth must be >= 1");
  }
  std::string_view type() const override { return "one_hot"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1) throw GraphError("one_hot takes 1 input");
    std::vector<int64_t> d = in[0].dims();
    d.push_back(depth_);
    return Shape(std::move(d));
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& idx = *in[0];
    std::vector<int64_t> d = idx.shape().dims();
    d.push_back(depth_);
    Tensor out{Shape(std::move(d))};
    for (size_t i = 0; i < idx.size(); ++i) {
      const int64_t k = idx.index_at(i);
      if (k >= depth_) {
        throw ExecutionError("one_hot: index " + std::to_string(k) +
                             " out of range [0, " + std::to_string(depth_) + ")");
      }
      out[i * static_cast<size_t>(depth_) + static_cast<size_t>(k)] = 1.0;
    }
    return out;
  }
  Grads backward(Inputs, const Tensor&, const Tensor&, ExecContext&) const override {
    return {std::nullopt};
  }

 private:
  int64_t depth_;
};

class GatherOp final : public Op {
 public:
  std::string_view type() const override { return "gather"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 2 || in[0].rank() < 1) {
      throw GraphError("gather: expects (table of rank >= 1, indices)");
    }
    std::vector<int64_t> d = in[1].dims();
    d.insert(d.end(), in[0].dims().begin() + 1, in[0].dims().end());
    return Shape(std::move(d));
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& table = *in[0];
    const Tensor& idx = *in[1];
    const int64_t rows = table.shape()[0];
    const size_t width = table.size() / static_cast<size_t>(std::max<int64_t>(rows, 1));
    std::vector<int64_t> d = idx.shape().dims();
    d.insert(d.end(), table.shape().dims().begin() + 1, table.shape().dims().end());
    Tensor out{Shape(std::move(d))};
    for (size_t i = 0; i < idx.size(); ++i) {
      const int64_t r = idx.index_at(i);
      if (r >= rows) {
        throw ExecutionError("gather: index " + std::to_string(r) +
                             " out of range for table with " +
                             std::to_string(rows) + " rows");
      }
      std::copy_n(&table[static_cast<size_t>(r) * width], width, &out[i * width]);
    }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& table = *in[0];
    const Tensor& idx = *in[1];
    const size_t width =
        table.size() / static_cast<size_t>(std::max<int64_t>(table.shape()[0], 1));
    Tensor gt(table.shape());
    for (size_t i = 0; i < idx.size(); ++i) {
      const auto r = static_cast<size_t>(idx.index_at(i));
      for (size_t j = 0; j < width; ++j) gt[r * width + j] += g[i * width + j];
    }
    return {std::move(gt), std::nullopt};
  }
};

// NHWC input, [kh, kw, in_c, out_c] kernel, stride 1, valid padding.
class Conv2DOp final : public Op {
 public:
  std::string_view type() const override { return "conv2d"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 2 || in[0].rank() != 4 || in[1].rank() != 4) {
      throw GraphError("conv2d: expects rank-4 input and kernel, got " +
                       (in.size() == 2 ? in[0].to_string() + " and " + in[1].to_string()
                                       : std::string("wrong input count")));
    }
    const Shape& x = in[0];
    const Shape& k = in[1];
    if (x[3] >= 0 && x[3] != k[2]) shape_error("conv2d", x, k);
    auto out_dim = [&](int64_t n, int64_t kk) -> int64_t {
      if (n < 0) return Shape::kUnknown;
      if (kk > n) {
        throw GraphError("conv2d: kernel " + k.to_string() +
                         " larger than input " + x.to_string());
      }
      return n - kk + 1;
    };
    return Shape{x[0], out_dim(x[1], k[0]), out_dim(x[2], k[1]), k[3]};
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    const Dims d = dims(x, k);
    Tensor out(Shape{d.b, d.oh, d.ow, d.f});
    for (int64_t n = 0; n < d.b; ++n)
      for (int64_t i = 0; i < d.oh; ++i)
        for (int64_t j = 0; j < d.ow; ++j)
          for (int64_t di = 0; di < d.kh; ++di)
            for (int64_t dj = 0; dj < d.kw; ++dj)
              for (int64_t c = 0; c < d.c; ++c) {
                const double xv = x[xi(d, n, i + di, j + dj, c)];
                if (xv == 0.0) continue;
                for (int64_t f = 0; f < d.f; ++f) {
                  out[oi(d, n, i, j, f)] += xv * k[ki(d, di, dj, c, f)];
                }
              }
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    const Dims d = dims(x, k);
    Tensor gx(x.shape());
    Tensor gk(k.shape());
    for (int64_t n = 0; n < d.b; ++n)
      for (int64_t i = 0; i < d.oh; ++i)
        for (int64_t j = 0; j < d.ow; ++j)
          for (int64_t di = 0; di < d.kh; ++di)
            for (int64_t dj = 0; dj < d.kw; ++dj)
              for (int64_t c = 0; c < d.c; ++c) {
                const size_t xidx = xi(d, n, i + di, j + dj, c);
                double acc = 0;
                for (int64_t f = 0; f < d.f; ++f) {
                  const double gv = g[oi(d, n, i, j, f)];
                  acc += gv * k[ki(d, di, dj, c, f)];
                  gk[ki(d, di, dj, c, f)] += gv * x[xidx];
                }
                gx[xidx] += acc;
              }
    return {std::move(gx), std::move(gk)};
  }

 private:
  struct Dims {
    int64_t b, h, w, c, kh, kw, f, oh, ow;
  };
  static Dims dims(const Tensor& x, const Tensor& k) {
    const auto& xs = x.shape();
    const auto& ks = k.shape();
    if (xs[3] != ks[2] || ks[0] > xs[1] || ks[1] > xs[2]) {
      throw ExecutionError("conv2d: incompatible shapes " + xs.to_string() +
                           " and " + ks.to_string());
    }
    return Dims{xs[0], xs[1], xs[2], xs[3], ks[0], ks[1], ks[3],
                xs[1] - ks[0] + 1, xs[2] - ks[1] + 1};
  }
  static size_t xi(const Dims& d, int64_t n, int64_t i, int64_t j, int64_t c) {
    return static_cast<size_t>(((n * d.h + i) * d.w + j) * d.c + c);
  }
  static size_t ki(const Dims& d, int64_t i, int64_t j, int64_t c, int64_t f) {
    return static_cast<size_t>(((i * d.kw + j) * d.c + c) * d.f + f);
  }
  static size_t oi(const Dims& d, int64_t n, int64_t i, int64_t j, int64_t f) {
    return static_cast<size_t>(((n * d.oh + i) * d.ow + j) * d.f + f);
  }
};

class MaxPool2DOp final : public Op {
 public:
  MaxPool2DOp(int64_t pool, int64_t stride) : pool_(pool), stride_(stride) {
    if (pool < 1 || stride < 1) {
      throw GraphError("max_pool2d: pool and stride must be >= 1");
    }
  }
  std::string_view type() const override { return "max_pool2d"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1 || in[0].rank() != 4) {
      throw GraphError("max_pool2d: expects one rank-4 input");
    }
    auto out_dim = [&](int64_t n) -> int64_t {
      if (n < 0) return Shape::kUnknown;
      if (pool_ > n) {
        throw GraphError("max_pool2d: pool " + std::to_string(pool_) +
                         " larger than input " + in[0].to_string());
      }
      return (n - pool_) / stride_ + 1;
    };
    return Shape{in[0][0], out_dim(in[0][1]), out_dim(in[0][2]), in[0][3]};
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& x = *in[0];
    Tensor out(out_shape(x.shape()));
    for_each_window(x, out.shape(), [&](size_t o, size_t best) { out[o] = x[best]; });
    return out;
  }
  Grads backward(Inputs in, const Tensor& out, const Tensor& g,
                 ExecContext&) const override {
    const Tensor& x = *in[0];
    Tensor gx(x.shape());
    for_each_window(x, out.shape(), [&](size_t o, size_t best) { gx[best] += g[o]; });
    return {std::move(gx)};
  }

 private:
  Shape out_shape(const Shape& s) const {
    if (pool_ > s[1] || pool_ > s[2]) {
      throw ExecutionError("max_pool2d: pool larger than input " + s.to_string());
    }
    return Shape{s[0], (s[1] - pool_) / stride_ + 1, (s[2] - pool_) / stride_ + 1, s[3]};
  }
  // Calls fn(output index, input index of the window max) for every output.
  template <typename Fn>
  void for_each_window(const Tensor& x, const Shape& os, Fn fn) const {
    const auto& s = x.shape();
    for (int64_t n = 0; n < os[0]; ++n)
      for (int64_t i = 0; i < os[1]; ++i)
        for (int64_t j = 0; j < os[2]; ++j)
          for (int64_t c = 0; c < os[3]; ++c) {
            size_t best = 0;
            double bv = -std::numeric_limits<double>::infinity();
            for (int64_t di = 0; di < pool_; ++di)
              for (int64_t dj = 0; dj < pool_; ++dj) {
                const auto idx = static_cast<size_t>(
                    ((n * s[1] + i * stride_ + di) * s[2] + j * stride_ + dj) * s[3] + c);
                if (x[idx] > bv) {
                  bv = x[idx];
                  best = idx;
                }
              }
            fn(static_cast<size_t>(((n * os[1] + i) * os[2] + j) * os[3] + c), best);
          }
  }

  int64_t pool_;
  int64_t stride_;
};

// Inverted dropout: kept units are scaled by 1/(1-rate). Identity unless
// built for training.
class DropoutOp final : public Op {
 public:
  DropoutOp(double rate, bool training) : rate_(rate), training_(training) {
    if (rate < 0 || rate >= 1) throw GraphError("dropout: rate must be in [0, 1)");
  }
  std::string_view type() const override { return "dropout"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1) throw GraphError("dropout takes 1 input");
    return in[0];
  }
  Tensor forward(Inputs in, ExecContext& ctx) const override {
    if (!active()) return *in[0];
    Tensor out = *in[0];
    const auto m = mask(ctx, out.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return out;
  }
  Grads backward(Inputs in, const Tensor&, const Tensor& g,
                 ExecContext& ctx) const override {
    if (!active()) return {g};
    Tensor d = g;
    const auto m = mask(ctx, in[0]->size());
    for (size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
    return {std::move(d)};
  }

 private:
  bool active() const { return training_ && rate_ > 0; }
  std::vector<double> mask(ExecContext& ctx, size_t n) const {
    auto rng = ctx.node_rng();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> m(n);
    const double scale = 1.0 / (1.0 - rate_);
    for (auto& v : m) v = u(rng) < rate_ ? 0.0 : scale;
    return m;
  }

  double rate_;
  bool training_;
};

class ArgMaxOp final : public Op {
 public:
  std::string_view type() const override { return "argmax"; }
  Shape infer_shape(std::span<const Shape> in) const override {
    if (in.size() != 1 || in[0].rank() < 1) {
      throw GraphError("argmax: expects one input of rank >= 1");
    }
    std::vector<int64_t> d = in[0].dims();
    d.pop_back();
    return Shape(std::move(d));
  }
  Tensor forward(Inputs in, ExecContext&) const override {
    const Tensor& x = *in[0];
    std::vector<int64_t> d = x.shape().dims();
    const auto n = static_cast<size_t>(d.back());
    d.pop_back();
    Tensor out{Shape(std::move(d))};
    for (size_t r = 0; r < out.size(); ++r) {
      size_t best = 0;
      for (size_t j = 1; j < n; ++j) {
        if (x[r * n + j] > x[r * n + best]) best = j;
      }
      out[r] = static_cast<double>(best);
    }
    return out;
  }
  Grads backward(Inputs, const Tensor&, const Tensor&, ExecContext&) const override {
    return {std::nullopt};
  }
};

// Shared logic for feature and label inputs: a tensor with leading batch
// dim and fixed per-example dims.
Tensor conform(const std::string& what, const std::string& name,
               const Tensor& t, const std::vector<int64_t>& dims) {
  int64_t per = 1;
  for (int64_t d : dims) per *= d;
  const int64_t b = t.batch();
  if (t.rank() == 0 || static_cast<int64_t>(t.size()) != b * per) {
    std::vector<int64_t> expected{Shape::kUnknown};
    expected.insert(expected.end(), dims.begin(), dims.end());
    throw ExecutionError(what + " '" + name + "' has shape " +
                         t.shape().to_string() + ", expected " +
                         Shape(std::move(expected)).to_string());
  }
  std::vector<int64_t> full{b};
  full.insert(full.end(), dims.begin(), dims.end());
  return Tensor(Shape(std::move(full)), t.raw());
}

class FeatureInputOp final : public Op {
 public:
  FeatureInputOp(std::string name, std::vector<int64_t> dims)
      : name_(std::move(name)), dims_(std::move(dims)) {}
  std::string_view type() const override { return "feature"; }
  Shape infer_shape(std::span<const Shape>) const override {
    std::vector<int64_t> d{Shape::kUnknown};
    d.insert(d.end(), dims_.begin(), dims_.end());
    return Shape(std::move(d));
  }
  Tensor forward(Inputs, ExecContext& ctx) const override {
    const Features& f = ctx.features();
    if (auto it = f.tensors.find(name_); it != f.tensors.end()) {
      return conform("feature", name_, it->second, dims_);
    }
    if (f.examples.empty()) {
      throw ExecutionError("feature '" + name_ + "' not present in input");
    }
    int64_t per = 1;
    for (int64_t d : dims_) per *= d;
    std::vector<double> v;
    v.reserve(f.examples.size() * static_cast<size_t>(per));
    for (size_t i = 0; i < f.examples.size(); ++i) {
      auto it = f.examples[i].features.find(name_);
      if (it == f.examples[i].features.end()) {
        throw ExecutionError("feature '" + name_ + "' missing from example " +
                             std::to_string(i));
      }
      const auto vals = it->second.as_doubles();
      if (static_cast<int64_t>(vals.size()) != per) {
        throw ExecutionError("feature '" + name_ + "' of example " +
                             std::to_string(i) + " has " +
                             std::to_string(vals.size()) + " values, expected " +
                             std::to_string(per));
      }
      v.insert(v.end(), vals.begin(), vals.end());
    }
    std::vector<int64_t> full{static_cast<int64_t>(f.examples.size())};
    full.insert(full.end(), dims_.begin(), dims_.end());
    return Tensor(Shape(std::move(full)), std::move(v));
  }
  Grads backward(Inputs, const Tensor&, const Tensor&, ExecContext&) const override {
    return {};
  }

 private:
  std::string name_;
  std::vector<int64_t> dims_;
};

class LabelInputOp final : public Op {
 public:
  LabelInputOp(std::string name, std::vector<int64_t> dims)
      : name_(std::move(name)), dims_(std::move(dims)) {}
  std::string_view type() const override { return "label"; }
  Shape infer_shape(std::span<const Shape>) const override {
    std::vector<int64_t> d{Shape::kUnknown};
    d.insert(d.end(), dims_.begin(), dims_.end());
    return Shape(std::move(d));
  }
  Tensor forward(Inputs, ExecContext& ctx) const override {
    const Labels& labels = ctx.labels();
    auto it = labels.find(name_);
    if (it == labels.end()) {
      throw ExecutionError("label '" + name_ + "' not present in input");
    }
    return conform("label", name_, it->second, dims_);
  }
  Grads backward(Inputs, const Tensor&, const Tensor&, ExecContext&) const override {
    return {};
  }

 private:
  std::string name_;
  std::vector<int64_t> dims_;
};

Graph& graph_of(const std::vector<Node>& inputs, std::string_view kind) {
  if (inputs.empty() || !inputs.front().valid()) {
    throw GraphError(std::string(kind) + ": needs at least one valid input");
  }
  return *inputs.front().graph();
}

using Factory = std::function<std::shared_ptr<const Op>(const OpAttrs&)>;

const std::map<std::string_view, Factory>& factories() {
  static const std::map<std::string_view, Factory> table = {
      {"matmul", [](const OpAttrs&) { return std::make_shared<MatMulOp>(); }},
      {"add", [](const OpAttrs&) { return std::make_shared<AddOp>(); }},
      {"sub", [](const OpAttrs&) { return std::make_shared<SubOp>(); }},
      {"mul", [](const OpAttrs&) { return std::make_shared<MulOp>(); }},
      {"div", [](const OpAttrs&) { return std::make_shared<DivOp>(false); }},
      {"div_no_nan", [](const OpAttrs&) { return std::make_shared<DivOp>(true); }},
      {"neg", [](const OpAttrs&) { return std::make_shared<NegOp>(); }},
      {"relu", [](const OpAttrs&) { return std::make_shared<ReluOp>(); }},
      {"sigmoid", [](const OpAttrs&) { return std::make_shared<SigmoidOp>(); }},
      {"tanh", [](const OpAttrs&) { return std::make_shared<TanhOp>(); }},
      {"exp", [](const OpAttrs&) { return std::make_shared<ExpOp>(); }},
      {"log", [](const OpAttrs&) { return std::make_shared<LogOp>(); }},
      {"abs", [](const OpAttrs&) { return std::make_shared<AbsOp>(); }},
      {"square", [](const OpAttrs&) { return std::make_shared<SquareOp>(); }},
      {"softplus", [](const OpAttrs&) { return std::make_shared<SoftplusOp>(); }},
      {"softmax", [](const OpAttrs&) { return std::make_shared<SoftmaxOp>(false); }},
      {"log_softmax", [](const OpAttrs&) { return std::make_shared<SoftmaxOp>(true); }},
      {"reduce_sum",
       [](const OpAttrs& a) { return std::make_shared<ReduceOp>(false, a.axis); }},
      {"reduce_mean",
       [](const OpAttrs& a) { return std::make_shared<ReduceOp>(true, a.axis); }},
      {"concat", [](const OpAttrs& a) { return std::make_shared<ConcatOp>(a.axis); }},
      {"reshape", [](const OpAttrs& a) { return std::make_shared<ReshapeOp>(a.dims); }},
      {"one_hot", [](const OpAttrs& a) { return std::make_shared<OneHotOp>(a.depth); }},
      {"gather", [](const OpAttrs&) { return std::make_shared<GatherOp>(); }},
      {"conv2d", [](const OpAttrs&) { return std::make_shared<Conv2DOp>(); }},
      {"max_pool2d",
       [](const OpAttrs& a) { return std::make_shared<MaxPool2DOp>(a.pool, a.stride); }},
      {"dropout",
       [](const OpAttrs& a) { return std::make_shared<DropoutOp>(a.rate, a.training); }},
      {"argmax", [](const OpAttrs&) { return std::make_shared<ArgMaxOp>(); }},
      {"equal", [](const OpAttrs&) { return std::make_shared<EqualOp>(); }},
  };
  return table;
}

}  // namespace

Node primitive(std::string_view kind, std::vector<Node> inputs,
               const OpAttrs& attrs) {
  const auto& table = factories();
  auto it = table.find(kind);
  if (it == table.end()) {
    throw GraphError("unknown primitive kind '" + std::string(kind) + "'");
  }
  Graph& g = graph_of(inputs, kind);
  return g.add(it->second(attrs), std::move(inputs));
}

const std::vector<std::string_view>& primitive_kinds() {
  static const std::vector<std::string_view> kinds = [] {
    std::vector<std::string_view> k;
    for (const auto& [name, f] : factories()) k.push_back(name);
    return k;
  }();
  return kinds;
}

Node matmul(Node a, Node b) { return primitive("matmul", {a, b}); }
Node add(Node a, Node b) { return primitive("add", {a, b}); }
Node sub(Node a, Node b) { return primitive("sub", {a, b}); }
Node mul(Node a, Node b) { return primitive("mul", {a, b}); }
Node div(Node a, Node b) { return primitive("div", {a, b}); }
Node div_no_nan(Node a, Node b) { return primitive("div_no_nan", {a, b}); }
Node neg(Node x) { return primitive("neg", {x}); }
Node relu(Node x) { return primitive("relu", {x}); }
Node sigmoid(Node x) { return primitive("sigmoid", {x}); }
Node tanh(Node x) { return primitive("tanh", {x}); }
Node exp(Node x) { return primitive("exp", {x}); }
Node log(Node x) { return primitive("log", {x}); }
Node abs(Node x) { return primitive("abs", {x}); }
Node square(Node x) { return primitive("square", {x}); }
Node softplus(Node x) { return primitive("softplus", {x}); }
Node softmax(Node x) { return primitive("softmax", {x}); }
Node log_softmax(Node x) { return primitive("log_softmax", {x}); }

Node reduce_sum(Node x, int axis) {
  return primitive("reduce_sum", {x}, OpAttrs{.axis = axis});
}
Node reduce_mean(Node x, int axis) {
  return primitive("reduce_mean", {x}, OpAttrs{.axis = axis});
}
Node concat(std::vector<Node> xs, int axis) {
  if (xs.size() == 1) return xs.front();
  return primitive("concat", std::move(xs), OpAttrs{.axis = axis});
}
Node reshape(Node x, std::vector<int64_t> dims) {
  return primitive("reshape", {x}, OpAttrs{.dims = std::move(dims)});
}
Node one_hot(Node indices, int64_t depth) {
  return primitive("one_hot", {indices}, OpAttrs{.depth = depth});
}
Node gather(Node table, Node indices) { return primitive("gather", {table, indices}); }
Node conv2d(Node input, Node kernel) { return primitive("conv2d", {input, kernel}); }
Node max_pool2d(Node input, int64_t pool, int64_t stride) {
  return primitive("max_pool2d", {input}, OpAttrs{.pool = pool, .stride = stride});
}
Node dropout(Node x, double rate, bool training) {
  return primitive("dropout", {x}, OpAttrs{.rate = rate, .training = training});
}
Node argmax(Node x) { return primitive("argmax", {x}); }
Node equal(Node a, Node b) { return primitive("equal", {a, b}); }

Node feature_input(Graph& g, const std::string& name, std::vector<int64_t> dims) {
  return g.add(std::make_shared<FeatureInputOp>(name, std::move(dims)), {});
}

Node label_input(Graph& g, const std::string& name, std::vector<int64_t> dims) {
  return g.add(std::make_shared<LabelInputOp>(name, std::move(dims)), {});
}

}  // namespace est
