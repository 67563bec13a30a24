// Copyright 2026 The CLINIC Authors. All Rights Reserved.
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

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Graph owns every node created during one step. Node ids are issued in
// creation order, which is a topological order because an op can only
// reference nodes that already exist; backward() therefore walks ids in
// reverse and visits each node exactly once.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clinic::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor row(std::initializer_list<double> values);
  static Tensor row(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool same_shape(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row_span(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  void fill(double v);
  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

class Graph;

/// Lightweight handle to a node inside a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that accumulates a gradient.
  Var variable(Tensor value);
  /// Leaf bound to an external parameter tensor. Binding the same tensor twice
  /// returns the same node, so shared weights accumulate into one gradient.
  Var param(const Tensor& parameter);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated for a bound parameter; zeros if it was never bound.
  Tensor param_grad(const Tensor& parameter) const;

  /// Seeds d(root)/d(root) = 1 and propagates to every leaf. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward(Var root);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by op implementations.
  Var push(std::string_view op, Tensor value, std::vector<std::size_t> parents,
           BackwardFn backward);
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_at(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of `id`, or nullptr when that node does not need one.
  Tensor* grad_sink(std::size_t id) {
    return nodes_[id].requires_grad ? &nodes_[id].grad : nullptr;
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_params_;
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1×m row vector to every row of an n×m matrix.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var leaky_relu(Var a, double slope = 0.01);
Var tanh(Var a);
Var scale(Var a, double factor);
Var concat_rows(Var a, Var b);
/// Pairwise dot products of the rows of `a` (n×d) and `b` (m×d): n×m.
Var row_dot(Var a, Var b);
/// a·aᵀ, computed once per pair and mirrored: n×n.
Var gram(Var a);
/// Overflow-safe log Σ_j exp(a_ij) per row: n×1.
Var log_sum_exp(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var mean(Var a);
Var sum(Var a);
/// out_i = a(i, index[i]): n×1.
Var pick(Var a, std::span<const int> index);
Var select_rows(Var a, std::span<const std::size_t> rows);
/// Scales each row to unit Euclidean norm. A zero row is an error.
Var l2_normalize_rows(Var a);
/// Row-wise mean over entries where mask != 0; rows with an empty mask give 0.
Var masked_row_mean(Var a, Tensor mask);
/// Row-wise log-sum-exp over entries where mask != 0; empty rows give 0.
Var masked_log_sum_exp(Var a, Tensor mask);
/// out_k = c · mean_{j∈partners[anchors[k]]} a_i·a_j with i = anchors[k]: |anchors|×1.
/// Only listed pairs are touched. An empty partner list gives 0.
Var pair_dot_mean(Var a, std::span<const std::size_t> anchors,
                  std::span<const std::vector<std::size_t>> partners, double c = 1.0);
/// out_k = log Σ_{j∈partners[anchors[k]]} exp(c · a_i·a_j), overflow-safe: |anchors|×1.
Var pair_dot_log_sum_exp(Var a, std::span<const std::size_t> anchors,
                         std::span<const std::vector<std::size_t>> partners, double c = 1.0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// Dense kernels shared with non-graph code paths.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor row_dot(const Tensor& a, const Tensor& b);

}  // namespace clinic::ad
