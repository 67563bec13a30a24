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

#include "clinic/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

#include "clinic/errors.hpp"

namespace clinic::ad {

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("tensor of shape " + std::to_string(rows_) + "x" +
                     std::to_string(cols_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return row(std::vector<double>(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

// ---- Graph ----------------------------------------------------------------

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.grad = Tensor(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(const Tensor& parameter) {
  if (auto it = bound_params_.find(&parameter); it != bound_params_.end()) {
    return {this, it->second};
  }
  Var v = variable(parameter);
  nodes_[v.id].op = "param";
  bound_params_.emplace(&parameter, v.id);
  return v;
}

Tensor Graph::param_grad(const Tensor& parameter) const {
  if (auto it = bound_params_.find(&parameter); it != bound_params_.end()) {
    return nodes_[it->second].grad;
  }
  return Tensor(parameter.rows(), parameter.cols());
}

Var Graph::push(std::string_view op, Tensor value, std::vector<std::size_t> parents,
                BackwardFn backward) {
  Node n;
  n.op = op;
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) {
    return nodes_[p].requires_grad;
  });
  if (n.requires_grad) {
    n.grad = Tensor(value.rows(), value.cols());
    n.backward = std::move(backward);
  }
  n.value = std::move(value);
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Graph::backward(Var root) {
  Node& r = nodes_.at(root.id);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward requires a scalar root, got " + r.value.shape_string());
  }
  if (!r.requires_grad) return;
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (!nodes_[i].is_leaf && nodes_[i].requires_grad) nodes_[i].grad.fill(0.0);
  }
  r.grad[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

void Graph::zero_grad() {
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad.fill(0.0);
  }
}

// ---- dense kernels --------------------------------------------------------

namespace {

[[noreturn]] void shape_mismatch(std::string_view op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                   " and " + b.shape_string());
}

// c += a · b
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c += a · bᵀ
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      pc[i * m + j] += s;
    }
  }
}

// c += aᵀ · b
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = pa + i * k;
    const double* bi = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = pc + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

double row_lse(const double* x, std::size_t m, const double* mask = nullptr) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    if (mask == nullptr || mask[j] != 0.0) hi = std::max(hi, x[j]);
  }
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (mask == nullptr || mask[j] != 0.0) s += std::exp(x[j] - hi);
  }
  return hi + std::log(s);
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_mismatch(op, a, b);
}

void require_mask(std::string_view op, const Tensor& a, const Tensor& mask) {
  if (!a.same_shape(mask)) shape_mismatch(op, a, mask);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Tensor c(a.rows(), b.cols());
  gemm_acc(a, b, c);
  return c;
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_mismatch("row_dot", a, b);
  Tensor c(a.rows(), b.rows());
  gemm_nt_acc(a, b, c);
  return c;
}

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = matmul(a.value(), b.value());
  return g.push("matmul", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
                  const Tensor& dc = g.grad_at(self);
                  if (Tensor* da = g.grad_sink(ia)) gemm_nt_acc(dc, g.value_at(ib), *da);
                  if (Tensor* db = g.grad_sink(ib)) gemm_tn_acc(g.value_at(ia), dc, *db);
                });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return g.push("add", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t p : {ia, ib}) {
                    if (Tensor* dp = g.grad_sink(p)) {
                      for (std::size_t i = 0; i < d.size(); ++i) (*dp)[i] += d[i];
                    }
                  }
                });
}

Var sub(Var a, Var b) {
  Graph& g = *a.graph;
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return g.push("sub", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  if (Tensor* da = g.grad_sink(ia)) {
                    for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i];
                  }
                  if (Tensor* db = g.grad_sink(ib)) {
                    for (std::size_t i = 0; i < d.size(); ++i) (*db)[i] -= d[i];
                  }
                });
}

Var add_row(Var a, Var row) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_mismatch("add_row", av, rv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  }
  return g.push("add_row", std::move(out), {a.id, row.id},
                [ia = a.id, ir = row.id](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  if (Tensor* da = g.grad_sink(ia)) {
                    for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i];
                  }
                  if (Tensor* dr = g.grad_sink(ir)) {
                    for (std::size_t i = 0; i < d.rows(); ++i) {
                      for (std::size_t j = 0; j < d.cols(); ++j) (*dr)[j] += d(i, j);
                    }
                  }
                });
}

Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.push("mul", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  const Tensor& av = g.value_at(ia);
                  const Tensor& bv = g.value_at(ib);
                  if (Tensor* da = g.grad_sink(ia)) {
                    for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i] * bv[i];
                  }
                  if (Tensor* db = g.grad_sink(ib)) {
                    for (std::size_t i = 0; i < d.size(); ++i) (*db)[i] += d[i] * av[i];
                  }
                });
}

Var leaky_relu(Var a, double slope) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : slope * v;
  return g.push("leaky_relu", std::move(out), {a.id},
                [ia = a.id, slope](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  const Tensor& x = g.value_at(ia);
                  for (std::size_t i = 0; i < d.size(); ++i) {
                    (*da)[i] += x[i] > 0.0 ? d[i] : slope * d[i];
                  }
                });
}

Var tanh(Var a) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return g.push("tanh", std::move(out), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    Tensor* da = g.grad_sink(ia);
    if (!da) return;
    const Tensor& d = g.grad_at(self);
    const Tensor& y = g.value_at(self);
    for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var scale(Var a, double factor) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return g.push("scale", std::move(out), {a.id},
                [ia = a.id, factor](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < d.size(); ++i) (*da)[i] += factor * d[i];
                });
}

Var concat_rows(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_mismatch("concat_rows", av, bv);
  std::vector<double> vals;
  vals.reserve(av.size() + bv.size());
  vals.insert(vals.end(), av.values().begin(), av.values().end());
  vals.insert(vals.end(), bv.values().begin(), bv.values().end());
  Tensor out(av.rows() + bv.rows(), av.cols(), std::move(vals));
  const std::size_t split = av.size();
  return g.push("concat_rows", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id, split](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  if (Tensor* da = g.grad_sink(ia)) {
                    for (std::size_t i = 0; i < split; ++i) (*da)[i] += d[i];
                  }
                  if (Tensor* db = g.grad_sink(ib)) {
                    for (std::size_t i = split; i < d.size(); ++i) (*db)[i - split] += d[i];
                  }
                });
}

Var row_dot(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = row_dot(a.value(), b.value());
  return g.push("row_dot", std::move(out), {a.id, b.id},
                [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
                  const Tensor& d = g.grad_at(self);
                  // C = A Bᵀ  ⇒  dA = dC B,  dB = dCᵀ A
                  if (Tensor* da = g.grad_sink(ia)) gemm_acc(d, g.value_at(ib), *da);
                  if (Tensor* db = g.grad_sink(ib)) gemm_tn_acc(d, g.value_at(ia), *db);
                });
}

Var gram(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * k;
    for (std::size_t j = i; j < n; ++j) {
      const double* xj = x.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += xi[p] * xj[p];
      out(i, j) = s;
      out(j, i) = s;
    }
  }
  return g.push("gram", std::move(out), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    Tensor* da = g.grad_sink(ia);
    if (!da) return;
    // dA = (dC + dCᵀ) A
    const Tensor& d = g.grad_at(self);
    const std::size_t n = d.rows();
    Tensor sym(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sym(i, j) = d(i, j) + d(j, i);
    }
    gemm_acc(sym, g.value_at(ia), *da);
  });
}

Var log_sum_exp(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i] = row_lse(x.data() + i * x.cols(), x.cols());
  }
  return g.push("log_sum_exp", std::move(out), {a.id},
                [ia = a.id](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& x = g.value_at(ia);
                  const Tensor& y = g.value_at(self);
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < x.rows(); ++i) {
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                      (*da)(i, j) += d[i] * std::exp(x(i, j) - y[i]);
                    }
                  }
                });
}

Var softmax(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double lse = row_lse(x.data() + i * x.cols(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = std::exp(x(i, j) - lse);
  }
  return g.push("softmax", std::move(out), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    Tensor* da = g.grad_sink(ia);
    if (!da) return;
    const Tensor& y = g.value_at(self);
    const Tensor& d = g.grad_at(self);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += d(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) (*da)(i, j) += y(i, j) * (d(i, j) - dot);
    }
  });
}

Var log_softmax(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double lse = row_lse(x.data() + i * x.cols(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return g.push("log_softmax", std::move(out), {a.id},
                [ia = a.id](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& y = g.value_at(self);
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < y.cols(); ++j) total += d(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j) {
                      (*da)(i, j) += d(i, j) - std::exp(y(i, j)) * total;
                    }
                  }
                });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return g.push("sum", Tensor::scalar(s), {a.id}, [ia = a.id](Graph& g, std::size_t self) {
    Tensor* da = g.grad_sink(ia);
    if (!da) return;
    const double d = g.grad_at(self)[0];
    for (auto& v : da->values()) v += d;
  });
}

Var mean(Var a) {
  Graph& g = *a.graph;
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return g.push("mean", Tensor::scalar(s / static_cast<double>(n)), {a.id},
                [ia = a.id, n](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const double d = g.grad_at(self)[0] / static_cast<double>(n);
                  for (auto& v : da->values()) v += d;
                });
}

Var pick(Var a, std::span<const int> index) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (index.size() != x.rows()) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " +
                     x.shape_string() + " input");
  }
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= x.cols()) {
      throw ShapeError("pick: index " + std::to_string(index[i]) + " out of range for " +
                       x.shape_string());
    }
    out[i] = x(i, static_cast<std::size_t>(index[i]));
  }
  return g.push("pick", std::move(out), {a.id},
                [ia = a.id, idx = std::vector<int>(index.begin(), index.end())](
                    Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    (*da)(i, static_cast<std::size_t>(idx[i])) += d[i];
                  }
                });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw ShapeError("select_rows: row " + std::to_string(rows[k]) +
                       " out of range for " + x.shape_string());
    }
    std::copy_n(x.data() + rows[k] * x.cols(), x.cols(), out.data() + k * x.cols());
  }
  return g.push("select_rows", std::move(out), {a.id},
                [ia = a.id, r = std::vector<std::size_t>(rows.begin(), rows.end())](
                    Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  const std::size_t m = d.cols();
                  for (std::size_t k = 0; k < r.size(); ++k) {
                    for (std::size_t j = 0; j < m; ++j) (*da)(r[k], j) += d(k, j);
                  }
                });
}

Var l2_normalize_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row_span(i)) s += v * v;
    const double n = std::sqrt(s);
    if (n == 0.0) {
      throw ShapeError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
    norms[i] = n;
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
  }
  return g.push("l2_normalize_rows", std::move(out), {a.id},
                [ia = a.id, norms = std::move(norms)](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& y = g.value_at(self);
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * d(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j) {
                      (*da)(i, j) += (d(i, j) - y(i, j) * dot) / norms[i];
                    }
                  }
                });
}

Var masked_row_mean(Var a, Tensor mask) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_mask("masked_row_mean", x, mask);
  Tensor out(x.rows(), 1);
  std::vector<double> counts(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        s += x(i, j);
        counts[i] += 1.0;
      }
    }
    out[i] = counts[i] > 0.0 ? s / counts[i] : 0.0;
  }
  return g.push("masked_row_mean", std::move(out), {a.id},
                [ia = a.id, mask = std::move(mask), counts = std::move(counts)](Graph& g,
                                                                                std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < mask.rows(); ++i) {
                    if (counts[i] == 0.0) continue;
                    const double w = d[i] / counts[i];
                    for (std::size_t j = 0; j < mask.cols(); ++j) {
                      if (mask(i, j) != 0.0) (*da)(i, j) += w;
                    }
                  }
                });
}

Var masked_log_sum_exp(Var a, Tensor mask) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_mask("masked_log_sum_exp", x, mask);
  Tensor out(x.rows(), 1);
  // The mask is overwritten with the softmax weights the backward pass needs.
  Tensor& weights = mask;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.data() + i * x.cols();
    double* wi = weights.data() + i * x.cols();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (wi[j] != 0.0) hi = std::max(hi, xi[j]);
    }
    if (!std::isfinite(hi)) {
      out[i] = 0.0;
      std::fill(wi, wi + x.cols(), 0.0);
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (wi[j] != 0.0) {
        wi[j] = std::exp(xi[j] - hi);
        total += wi[j];
      }
    }
    out[i] = hi + std::log(total);
    for (std::size_t j = 0; j < x.cols(); ++j) wi[j] /= total;
  }
  return g.push("masked_log_sum_exp", std::move(out), {a.id},
                [ia = a.id, weights = std::move(weights)](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& d = g.grad_at(self);
                  for (std::size_t i = 0; i < weights.rows(); ++i) {
                    const double di = d[i];
                    const double* wi = weights.data() + i * weights.cols();
                    double* out = da->data() + i * weights.cols();
                    for (std::size_t j = 0; j < weights.cols(); ++j) out[j] += di * wi[j];
                  }
                });
}

namespace {

// Anchor/partner lists flattened to row-major offsets.
struct PairIndex {
  std::vector<std::size_t> anchor;
  std::vector<std::size_t> start;
  std::vector<std::size_t> partner;
};

PairIndex flatten_pairs(std::string_view op, std::size_t n,
                        std::span<const std::size_t> anchors,
                        std::span<const std::vector<std::size_t>> partners) {
  PairIndex idx;
  idx.anchor.assign(anchors.begin(), anchors.end());
  idx.start.reserve(anchors.size() + 1);
  std::size_t total = 0;
  for (std::size_t i : anchors) {
    if (i >= n || i >= partners.size()) {
      throw ShapeError(std::string(op) + ": anchor " + std::to_string(i) + " out of range");
    }
    total += partners[i].size();
  }
  idx.partner.reserve(total);
  for (std::size_t i : anchors) {
    idx.start.push_back(idx.partner.size());
    for (std::size_t j : partners[i]) {
      if (j >= n) throw ShapeError(std::string(op) + ": partner " + std::to_string(j) + " out of range");
      idx.partner.push_back(j);
    }
  }
  idx.start.push_back(idx.partner.size());
  return idx;
}

// Kernels take the row width as a template argument when it is a common size
// (W > 0) so the inner loops are fully unrolled; W == 0 reads it at run time.
template <std::size_t W>
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t d) {
  if constexpr (W > 0 && W % 2 == 0) {
    using v2 = double __attribute__((vector_size(16)));
    v2 s{0.0, 0.0};
    for (std::size_t t = 0; t < W; t += 2) {
      v2 x, y;
      std::memcpy(&x, a + t, sizeof x);
      std::memcpy(&y, b + t, sizeof y);
      s += x * y;
    }
    return s[0] + s[1];
  } else {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
    return s;
  }
}

template <std::size_t W>
inline void axpy(double w, const double* __restrict x, double* __restrict y, std::size_t d) {
  const std::size_t n = W > 0 ? W : d;
  for (std::size_t k = 0; k < n; ++k) y[k] += w * x[k];
}

template <class F>
void dispatch_width(std::size_t d, F&& f) {
  switch (d) {
    case 8: f(std::integral_constant<std::size_t, 8>{}); break;
    case 16: f(std::integral_constant<std::size_t, 16>{}); break;
    case 32: f(std::integral_constant<std::size_t, 32>{}); break;
    case 64: f(std::integral_constant<std::size_t, 64>{}); break;
    default: f(std::integral_constant<std::size_t, 0>{}); break;
  }
}

// out[e] = c · a_i·a_j for every listed pair.
void pair_dots(const PairIndex& idx, const Tensor& a, double c, std::vector<double>& out) {
  const std::size_t d = a.cols();
  out.resize(idx.partner.size());
  dispatch_width(d, [&](auto width) {
    constexpr std::size_t W = decltype(width)::value;
    for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
      const double* ai = a.data() + idx.anchor[k] * d;
      for (std::size_t e = idx.start[k]; e < idx.start[k + 1]; ++e) {
        out[e] = c * dot<W>(ai, a.data() + idx.partner[e] * d, d);
      }
    }
  });
}

// da_i += Σ_j w_e a_j and da_j += w_e a_i for every listed pair, where
// w_e = row_scale[k] · weight[e] (weight defaults to 1). Rows are processed as
// pairs of doubles so the compiler emits packed arithmetic.
template <std::size_t W>
void pair_backward_fixed(const PairIndex& idx, const double* weight,
                         std::span<const double> row_scale, const Tensor& a, Tensor& da) {
  using v2 = double __attribute__((vector_size(16)));
  constexpr std::size_t H = W / 2;
  const double* pa = a.data();
  double* pd = da.data();
  for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
    if (row_scale[k] == 0.0) continue;
    const std::size_t i = idx.anchor[k];
    v2 ai[H], acc[H];
    for (std::size_t t = 0; t < H; ++t) {
      ai[t] = v2{pa[i * W + 2 * t], pa[i * W + 2 * t + 1]};
      acc[t] = v2{0.0, 0.0};
    }
    for (std::size_t e = idx.start[k]; e < idx.start[k + 1]; ++e) {
      const double s = weight ? row_scale[k] * weight[e] : row_scale[k];
      const v2 we = v2{s, s};
      const double* aj = pa + idx.partner[e] * W;
      double* dj = pd + idx.partner[e] * W;
      for (std::size_t t = 0; t < H; ++t) {
        v2 x, y;
        std::memcpy(&x, aj + 2 * t, sizeof x);
        std::memcpy(&y, dj + 2 * t, sizeof y);
        acc[t] += we * x;
        y += we * ai[t];
        std::memcpy(dj + 2 * t, &y, sizeof y);
      }
    }
    for (std::size_t t = 0; t < H; ++t) {
      pd[i * W + 2 * t] += acc[t][0];
      pd[i * W + 2 * t + 1] += acc[t][1];
    }
  }
}

void pair_backward(const PairIndex& idx, const double* weight, std::span<const double> row_scale,
                   const Tensor& a, Tensor& da) {
  const std::size_t d = a.cols();
  switch (d) {
    case 8: return pair_backward_fixed<8>(idx, weight, row_scale, a, da);
    case 16: return pair_backward_fixed<16>(idx, weight, row_scale, a, da);
    case 32: return pair_backward_fixed<32>(idx, weight, row_scale, a, da);
    default: break;
  }
  std::vector<double> acc(d);
  for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
    if (row_scale[k] == 0.0) continue;
    const std::size_t i = idx.anchor[k];
    const double* ai = a.data() + i * d;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t e = idx.start[k]; e < idx.start[k + 1]; ++e) {
      const double s = weight ? row_scale[k] * weight[e] : row_scale[k];
      const std::size_t j = idx.partner[e];
      axpy<0>(s, a.data() + j * d, acc.data(), d);
      axpy<0>(s, ai, da.data() + j * d, d);
    }
    axpy<0>(1.0, acc.data(), da.data() + i * d, d);
  }
}

}  // namespace

Var pair_dot_mean(Var a, std::span<const std::size_t> anchors,
                  std::span<const std::vector<std::size_t>> partners, double c) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  PairIndex idx = flatten_pairs("pair_dot_mean", x.rows(), anchors, partners);
  const std::size_t d = x.cols();
  // a_i · Σ_j a_j takes one dot per anchor; the partner sums serve the backward pass.
  Tensor sums(idx.anchor.size(), d);
  Tensor out(idx.anchor.size(), 1);
  std::vector<double> coef(idx.anchor.size(), 0.0);
  dispatch_width(d, [&](auto width) {
    constexpr std::size_t W = decltype(width)::value;
    for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
      const std::size_t count = idx.start[k + 1] - idx.start[k];
      if (count == 0) continue;
      double* sk = sums.data() + k * d;
      for (std::size_t e = idx.start[k]; e < idx.start[k + 1]; ++e) {
        axpy<W>(1.0, x.data() + idx.partner[e] * d, sk, d);
      }
      coef[k] = c / static_cast<double>(count);
      out[k] = coef[k] * dot<W>(x.data() + idx.anchor[k] * d, sk, d);
    }
  });
  return g.push("pair_dot_mean", std::move(out), {a.id},
                [ia = a.id, idx = std::move(idx), coef = std::move(coef),
                 sums = std::move(sums)](Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& dout = g.grad_at(self);
                  const Tensor& x = g.value_at(ia);
                  const std::size_t d = x.cols();
                  dispatch_width(d, [&](auto width) {
                    constexpr std::size_t W = decltype(width)::value;
                    for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
                      const double w = dout[k] * coef[k];
                      if (w == 0.0) continue;
                      const std::size_t i = idx.anchor[k];
                      axpy<W>(w, sums.data() + k * d, da->data() + i * d, d);
                      for (std::size_t e = idx.start[k]; e < idx.start[k + 1]; ++e) {
                        axpy<W>(w, x.data() + i * d, da->data() + idx.partner[e] * d, d);
                      }
                    }
                  });
                });
}

Var pair_dot_log_sum_exp(Var a, std::span<const std::size_t> anchors,
                         std::span<const std::vector<std::size_t>> partners, double c) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  PairIndex idx = flatten_pairs("pair_dot_log_sum_exp", x.rows(), anchors, partners);
  Tensor out(idx.anchor.size(), 1);
  // Scaled dots, turned in place into the softmax weights the backward pass needs.
  std::vector<double> weights;
  pair_dots(idx, x, c, weights);
  for (std::size_t k = 0; k < idx.anchor.size(); ++k) {
    const std::size_t lo = idx.start[k], hi_e = idx.start[k + 1];
    if (lo == hi_e) continue;
    const double hi = *std::max_element(weights.begin() + static_cast<std::ptrdiff_t>(lo),
                                        weights.begin() + static_cast<std::ptrdiff_t>(hi_e));
    double total = 0.0;
    for (std::size_t e = lo; e < hi_e; ++e) {
      weights[e] = std::exp(weights[e] - hi);
      total += weights[e];
    }
    out[k] = hi + std::log(total);
    for (std::size_t e = lo; e < hi_e; ++e) weights[e] /= total;
  }
  return g.push("pair_dot_log_sum_exp", std::move(out), {a.id},
                [ia = a.id, idx = std::move(idx), weights = std::move(weights), c](
                    Graph& g, std::size_t self) {
                  Tensor* da = g.grad_sink(ia);
                  if (!da) return;
                  const Tensor& dout = g.grad_at(self);
                  std::vector<double> scale(idx.anchor.size());
                  for (std::size_t k = 0; k < scale.size(); ++k) scale[k] = dout[k] * c;
                  pair_backward(idx, weights.data(), scale, g.value_at(ia), *da);
                });
}

}  // namespace clinic::ad
