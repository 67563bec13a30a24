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

// Exact information-theoretic quantities on finite joints (all in nats),
// latent discretization for empirical estimates, and the batch-level check of
// the contrastive bound relating the regularizer to per-class latent/sensitive
// mutual information.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/autodiff.hpp"

namespace clinic::info {

struct Axis {
  std::string name;
  std::size_t size = 0;

  friend bool operator==(const Axis&, const Axis&) = default;
};

/// Dense joint probability table, row-major over its axes (last axis fastest).
class DiscreteJoint {
 public:
  /// Validates non-negativity and Σ p = 1 ± 1e-12.
  DiscreteJoint(std::vector<Axis> axes, std::vector<double> probs);

  /// Normalizes non-negative counts. Throws when the total is zero.
  static DiscreteJoint from_counts(std::vector<Axis> axes, const std::vector<double>& counts);

  const std::vector<Axis>& axes() const noexcept { return axes_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  std::size_t rank() const noexcept { return axes_.size(); }
  std::size_t axis_size(std::size_t axis) const { return axes_.at(axis).size; }

  double at(std::span<const std::size_t> index) const;

  /// Marginal over the listed axes, in the listed order.
  DiscreteJoint marginal(std::span<const std::size_t> keep) const;
  /// Slice `axis == value`, renormalized. The slice must have positive mass.
  DiscreteJoint condition(std::size_t axis, std::size_t value) const;
  /// Probability mass of `axis == value`.
  double mass(std::size_t axis, std::size_t value) const;
  /// Returns a copy with the values of `axis` relabelled by `perm` (new = perm[old]).
  DiscreteJoint relabel(std::size_t axis, std::span<const std::size_t> perm) const;
  /// Returns a copy where values of `axis` are mapped through `groups` (many-to-one).
  DiscreteJoint merge(std::size_t axis, std::span<const std::size_t> groups,
                      std::size_t new_size) const;

 private:
  std::vector<std::size_t> strides() const;

  std::vector<Axis> axes_;
  std::vector<double> probs_;
};

void to_json(nlohmann::json& j, const DiscreteJoint& joint);
DiscreteJoint joint_from_json(const nlohmann::json& j);

/// I(A;B) for a rank-2 joint.
double exact_mi(const DiscreteJoint& joint);
/// I(Z;S|Y) for a rank-3 joint ordered (Z, S, Y).
double conditional_mi(const DiscreteJoint& zsy);
/// I(Z;S;Y) := I(Z;S) − I(Z;S|Y). May be negative.
double interaction_info(const DiscreteJoint& zsy);

struct MiDecomposition {
  double mutual_information = 0.0;    // I(Z;S)
  double conditional = 0.0;           // I(Z;S|Y)
  double interaction = 0.0;           // I(Z;S;Y)
};
MiDecomposition decompose(const DiscreteJoint& zsy);

/// Per-dimension quantile binning of the first `dims_used` latent columns.
/// Returns one composite bin id per row in [0, bins_per_dim^dims_used).
std::vector<std::size_t> discretize_latents(const ad::Tensor& z, std::size_t bins_per_dim,
                                            std::size_t dims_used);

/// Normalized count table over (Zbin, S, Y).
DiscreteJoint empirical_joint(std::span<const std::size_t> zbin, std::span<const int> s,
                              std::span<const int> y, std::size_t num_zbins,
                              std::size_t num_sensitive, std::size_t num_classes);

/// I(Z;S | Y=0) and I(Z;S | Y=1).
struct ClassConditionalMi {
  double class0 = 0.0;
  double class1 = 0.0;
};

/// Exact per-class MI from a (Z, S, Y) joint with binary Y.
ClassConditionalMi class_conditional_mi(const DiscreteJoint& zsy);

struct BoundReport {
  double p0 = 0.0;
  double p1 = 0.0;
  std::size_t batch_size = 0;
  double r_over_b = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool holds = false;
};

void to_json(nlohmann::json& j, const BoundReport& r);

/// log(p0·B)/p0 + log(p1·B)/p1 − R/B.
double bound_rhs(double p0, std::size_t batch_size, double regularizer);

/// Bound check with externally supplied per-class MI values.
BoundReport theorem1_check(std::span<const int> y, std::span<const int> s,
                           double regularizer, const ClassConditionalMi& mi,
                           double tolerance = 0.05);
/// Synthetic mode: per-class MI read off an exact (Z, S, Y) joint.
BoundReport theorem1_check(std::span<const int> y, std::span<const int> s,
                           double regularizer, const DiscreteJoint& zsy,
                           double tolerance = 0.05);
/// Empirical mode: per-class MI from discretized batch latents.
BoundReport theorem1_check(const ad::Tensor& latents, std::span<const int> y,
                           std::span<const int> s, double regularizer,
                           std::size_t bins_per_dim = 2, std::size_t dims_used = 2,
                           double tolerance = 0.05);

}  // namespace clinic::info
