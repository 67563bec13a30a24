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

#include "clinic/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clinic/errors.hpp"

namespace clinic::info {

namespace {

constexpr double kSumTolerance = 1e-12;

double plogp_ratio(double pab, double pa, double pb) {
  if (pab <= 0.0) return 0.0;
  return pab * (std::log(pab) - std::log(pa) - std::log(pb));
}

void require_rank(const DiscreteJoint& j, std::size_t rank, const char* what) {
  if (j.rank() != rank) {
    throw ConfigError(std::string(what) + " expects a rank-" + std::to_string(rank) +
                      " joint, got rank " + std::to_string(j.rank()));
  }
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::vector<Axis> axes, std::vector<double> probs)
    : axes_(std::move(axes)), probs_(std::move(probs)) {
  if (axes_.empty()) throw ConfigError("joint needs at least one axis");
  std::size_t n = 1;
  for (const auto& a : axes_) {
    if (a.size == 0) throw ConfigError("joint axis '" + a.name + "' has size 0");
    n *= a.size;
  }
  if (probs_.size() != n) {
    throw ConfigError("joint has " + std::to_string(probs_.size()) +
                      " probabilities, axes require " + std::to_string(n));
  }
  long double total = 0.0L;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ConfigError("joint probabilities must be finite and non-negative");
    }
    total += p;
  }
  if (std::fabs(static_cast<double>(total) - 1.0) > kSumTolerance) {
    throw ConfigError("joint probabilities sum to " +
                      std::to_string(static_cast<double>(total)) + ", expected 1");
  }
}

DiscreteJoint DiscreteJoint::from_counts(std::vector<Axis> axes,
                                         const std::vector<double>& counts) {
  long double total = 0.0L;
  for (double c : counts) {
    if (!(c >= 0.0)) throw ConfigError("counts must be non-negative");
    total += c;
  }
  if (total <= 0.0L) throw ConfigError("cannot normalize an all-zero count table");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i] / total);
  }
  return DiscreteJoint(std::move(axes), std::move(probs));
}

std::vector<std::size_t> DiscreteJoint::strides() const {
  std::vector<std::size_t> st(axes_.size(), 1);
  for (std::size_t k = axes_.size(); k-- > 1;) st[k - 1] = st[k] * axes_[k].size;
  return st;
}

double DiscreteJoint::at(std::span<const std::size_t> index) const {
  if (index.size() != axes_.size()) throw ConfigError("joint index rank mismatch");
  const auto st = strides();
  std::size_t flat = 0;
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= axes_[k].size) throw ConfigError("joint index out of range");
    flat += index[k] * st[k];
  }
  return probs_[flat];
}

DiscreteJoint DiscreteJoint::marginal(std::span<const std::size_t> keep) const {
  std::vector<Axis> out_axes;
  for (std::size_t k : keep) out_axes.push_back(axes_.at(k));
  std::size_t out_n = 1;
  for (const auto& a : out_axes) out_n *= a.size;
  std::vector<double> out(out_n, 0.0);

  const auto st = strides();
  std::vector<std::size_t> out_st(keep.size(), 1);
  for (std::size_t k = keep.size(); k-- > 1;) out_st[k - 1] = out_st[k] * out_axes[k].size;

  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const std::size_t ax = keep[k];
      o += ((flat / st[ax]) % axes_[ax].size) * out_st[k];
    }
    out[o] += probs_[flat];
  }
  // Re-normalize to absorb summation rounding.
  long double total = 0.0L;
  for (double p : out) total += p;
  for (double& p : out) p = static_cast<double>(p / total);
  return DiscreteJoint(std::move(out_axes), std::move(out));
}

double DiscreteJoint::mass(std::size_t axis, std::size_t value) const {
  const auto st = strides();
  long double m = 0.0L;
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    if ((flat / st.at(axis)) % axes_[axis].size == value) m += probs_[flat];
  }
  return static_cast<double>(m);
}

DiscreteJoint DiscreteJoint::condition(std::size_t axis, std::size_t value) const {
  if (axis >= axes_.size() || value >= axes_[axis].size) {
    throw ConfigError("condition: axis/value out of range");
  }
  const auto st = strides();
  std::vector<Axis> out_axes;
  for (std::size_t k = 0; k < axes_.size(); ++k) {
    if (k != axis) out_axes.push_back(axes_[k]);
  }
  std::vector<double> out;
  out.reserve(probs_.size() / axes_[axis].size);
  long double total = 0.0L;
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    if ((flat / st[axis]) % axes_[axis].size == value) {
      out.push_back(probs_[flat]);
      total += probs_[flat];
    }
  }
  if (total <= 0.0L) throw ConfigError("condition on a zero-probability value");
  for (double& p : out) p = static_cast<double>(p / total);
  if (out_axes.empty()) return DiscreteJoint({{"unit", 1}}, {1.0});
  return DiscreteJoint(std::move(out_axes), std::move(out));
}

DiscreteJoint DiscreteJoint::relabel(std::size_t axis,
                                     std::span<const std::size_t> perm) const {
  if (perm.size() != axes_.at(axis).size) throw ConfigError("relabel: bad permutation size");
  const auto st = strides();
  std::vector<double> out(probs_.size(), 0.0);
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    const std::size_t v = (flat / st[axis]) % axes_[axis].size;
    out[flat - v * st[axis] + perm[v] * st[axis]] = probs_[flat];
  }
  return DiscreteJoint(axes_, std::move(out));
}

DiscreteJoint DiscreteJoint::merge(std::size_t axis, std::span<const std::size_t> groups,
                                   std::size_t new_size) const {
  if (groups.size() != axes_.at(axis).size) throw ConfigError("merge: bad group map size");
  std::vector<Axis> out_axes = axes_;
  out_axes[axis].size = new_size;
  std::vector<std::size_t> out_st(out_axes.size(), 1);
  for (std::size_t k = out_axes.size(); k-- > 1;) {
    out_st[k - 1] = out_st[k] * out_axes[k].size;
  }
  const auto st = strides();
  std::size_t out_n = 1;
  for (const auto& a : out_axes) out_n *= a.size;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < axes_.size(); ++k) {
      std::size_t v = (flat / st[k]) % axes_[k].size;
      if (k == axis) {
        v = groups[v];
        if (v >= new_size) throw ConfigError("merge: group id out of range");
      }
      o += v * out_st[k];
    }
    out[o] += probs_[flat];
  }
  return DiscreteJoint(std::move(out_axes), std::move(out));
}

void to_json(nlohmann::json& j, const DiscreteJoint& joint) {
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : joint.axes()) axes.push_back({{"name", a.name}, {"size", a.size}});
  j = {{"axes", axes}, {"probs", joint.probs()}};
}

DiscreteJoint joint_from_json(const nlohmann::json& j) {
  try {
    std::vector<Axis> axes;
    for (const auto& a : j.at("axes")) {
      axes.push_back({a.at("name").get<std::string>(), a.at("size").get<std::size_t>()});
    }
    return DiscreteJoint(std::move(axes), j.at("probs").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed joint document: ") + e.what());
  }
}

double exact_mi(const DiscreteJoint& joint) {
  require_rank(joint, 2, "exact_mi");
  const std::size_t na = joint.axis_size(0), nb = joint.axis_size(1);
  std::vector<double> pa(na, 0.0), pb(nb, 0.0);
  const auto& p = joint.probs();
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t b = 0; b < nb; ++b) {
      pa[a] += p[a * nb + b];
      pb[b] += p[a * nb + b];
    }
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t b = 0; b < nb; ++b) mi += plogp_ratio(p[a * nb + b], pa[a], pb[b]);
  }
  // Rounding can leave −1e-17 on product-form joints.
  return std::max(0.0, mi);
}

double conditional_mi(const DiscreteJoint& zsy) {
  require_rank(zsy, 3, "conditional_mi");
  double total = 0.0;
  for (std::size_t y = 0; y < zsy.axis_size(2); ++y) {
    const double py = zsy.mass(2, y);
    if (py <= 0.0) continue;
    total += py * exact_mi(zsy.condition(2, y));
  }
  return std::max(0.0, total);
}

double interaction_info(const DiscreteJoint& zsy) {
  return decompose(zsy).interaction;
}

MiDecomposition decompose(const DiscreteJoint& zsy) {
  require_rank(zsy, 3, "decompose");
  const std::size_t zs[] = {0, 1};
  MiDecomposition d;
  d.mutual_information = exact_mi(zsy.marginal(zs));
  d.conditional = conditional_mi(zsy);
  d.interaction = d.mutual_information - d.conditional;
  return d;
}

std::vector<std::size_t> discretize_latents(const ad::Tensor& z, std::size_t bins_per_dim,
                                            std::size_t dims_used) {
  if (bins_per_dim < 2) throw ConfigError("discretize_latents: bins_per_dim must be >= 2");
  if (dims_used == 0 || dims_used > z.cols()) {
    throw ConfigError("discretize_latents: dims_used must be in [1, " +
                      std::to_string(z.cols()) + "]");
  }
  const std::size_t n = z.rows();
  std::vector<std::size_t> ids(n, 0);
  std::vector<double> column(n);
  std::size_t radix = 1;
  for (std::size_t k = 0; k < dims_used; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = z(i, k);
    std::vector<double> sorted = column;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (std::size_t b = 1; b < bins_per_dim; ++b) {
      cuts.push_back(n == 0 ? 0.0 : sorted[std::min(n - 1, b * n / bins_per_dim)]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      // Bin = number of cut points at or below the value; a constant column
      // lands entirely in one bin.
      const auto bin = static_cast<std::size_t>(
          std::upper_bound(cuts.begin(), cuts.end(), column[i]) - cuts.begin());
      ids[i] += bin * radix;
    }
    radix *= bins_per_dim;
  }
  return ids;
}

DiscreteJoint empirical_joint(std::span<const std::size_t> zbin, std::span<const int> s,
                              std::span<const int> y, std::size_t num_zbins,
                              std::size_t num_sensitive, std::size_t num_classes) {
  if (zbin.size() != s.size() || s.size() != y.size()) {
    throw ConfigError("empirical_joint: sample streams differ in length");
  }
  if (zbin.empty()) throw ConfigError("empirical_joint: no samples");
  std::vector<double> counts(num_zbins * num_sensitive * num_classes, 0.0);
  for (std::size_t i = 0; i < zbin.size(); ++i) {
    if (zbin[i] >= num_zbins || s[i] < 0 || static_cast<std::size_t>(s[i]) >= num_sensitive ||
        y[i] < 0 || static_cast<std::size_t>(y[i]) >= num_classes) {
      throw ConfigError("empirical_joint: sample " + std::to_string(i) + " out of range");
    }
    counts[(zbin[i] * num_sensitive + static_cast<std::size_t>(s[i])) * num_classes +
           static_cast<std::size_t>(y[i])] += 1.0;
  }
  return DiscreteJoint::from_counts(
      {{"Zbin", num_zbins}, {"S", num_sensitive}, {"Y", num_classes}}, counts);
}

ClassConditionalMi class_conditional_mi(const DiscreteJoint& zsy) {
  require_rank(zsy, 3, "class_conditional_mi");
  if (zsy.axis_size(2) != 2) throw ConfigError("class_conditional_mi needs binary Y");
  ClassConditionalMi out;
  out.class0 = zsy.mass(2, 0) > 0.0 ? exact_mi(zsy.condition(2, 0)) : 0.0;
  out.class1 = zsy.mass(2, 1) > 0.0 ? exact_mi(zsy.condition(2, 1)) : 0.0;
  return out;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  j = {{"p0", r.p0},   {"p1", r.p1},   {"B", r.batch_size}, {"R_over_B", r.r_over_b},
       {"lhs", r.lhs}, {"rhs", r.rhs}, {"tolerance", r.tolerance}, {"holds", r.holds}};
}

double bound_rhs(double p0, std::size_t batch_size, double regularizer) {
  const double p1 = 1.0 - p0;
  const auto b = static_cast<double>(batch_size);
  return std::log(p0 * b) / p0 + std::log(p1 * b) / p1 - regularizer / b;
}

BoundReport theorem1_check(std::span<const int> y, std::span<const int> s,
                           double regularizer, const ClassConditionalMi& mi,
                           double tolerance) {
  if (y.size() != s.size() || y.empty()) {
    throw ConfigError("bound check: label streams empty or of different length");
  }
  std::size_t n0 = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) throw ConfigError("bound check requires binary y");
    if (s[i] != 0 && s[i] != 1) throw ConfigError("bound check requires binary s");
    n0 += y[i] == 0 ? 1 : 0;
  }
  if (n0 == 0 || n0 == y.size()) {
    throw ConfigError("bound check requires both classes in the batch");
  }
  BoundReport r;
  r.batch_size = y.size();
  r.p0 = static_cast<double>(n0) / static_cast<double>(y.size());
  r.p1 = 1.0 - r.p0;
  r.r_over_b = regularizer / static_cast<double>(y.size());
  r.lhs = mi.class0 / r.p0 + mi.class1 / r.p1;
  r.rhs = bound_rhs(r.p0, r.batch_size, regularizer);
  r.tolerance = tolerance;
  r.holds = r.lhs >= r.rhs - tolerance;
  return r;
}

BoundReport theorem1_check(std::span<const int> y, std::span<const int> s,
                           double regularizer, const DiscreteJoint& zsy, double tolerance) {
  return theorem1_check(y, s, regularizer, class_conditional_mi(zsy), tolerance);
}

BoundReport theorem1_check(const ad::Tensor& latents, std::span<const int> y,
                           std::span<const int> s, double regularizer,
                           std::size_t bins_per_dim, std::size_t dims_used,
                           double tolerance) {
  if (latents.rows() != y.size()) throw ShapeError("bound check: latent/label row mismatch");
  const auto bins = discretize_latents(latents, bins_per_dim, dims_used);
  std::size_t nbins = 1;
  for (std::size_t k = 0; k < dims_used; ++k) nbins *= bins_per_dim;
  // Validate labels before building the table so the error names the real cause.
  ClassConditionalMi probe_labels{};
  (void)theorem1_check(y, s, regularizer, probe_labels, tolerance);
  const auto joint = empirical_joint(bins, s, y, nbins, 2, 2);
  return theorem1_check(y, s, regularizer, class_conditional_mi(joint), tolerance);
}

}  // namespace clinic::info
