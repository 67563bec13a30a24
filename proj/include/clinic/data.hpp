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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/autodiff.hpp"
#include "clinic/infotheory.hpp"
#include "clinic/rng.hpp"

namespace clinic::data {

struct LabeledExample {
  std::vector<double> features;
  int y = 0;
  int s = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Gaussian-mixture generator with a tunable dependence between the target
/// class y and the sensitive group s.
///
/// y is uniform. With probability `rho` the sensitive id is the group matched
/// to y (y mod |S|); otherwise it is uniform over all groups. Hence
/// P(s | y) = (1 − rho)/|S| + rho·[s == y mod |S|]; rho = 0 gives Y ⟂ S.
///
/// Features are means[(y, s)] + N(0, noise_sigma² I). `means` is indexed
/// y·|S| + s; when empty, a default geometry is used: y_signal on axis y and
/// s_signal on axis |Y| + s, so the two signals live in orthogonal coordinates.
struct SynthConfig {
  int num_classes = 2;
  int num_sensitive = 2;
  double rho = 0.0;
  std::size_t dim = 8;
  std::vector<std::vector<double>> means;
  double y_signal = 4.0;
  double s_signal = 1.0;
  double noise_sigma = 1.0;
  std::size_t n = 20000;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Throws ConfigError on an invalid configuration.
void validate(const SynthConfig& c);
/// means[(y, s)], either explicit or the default geometry.
std::vector<std::vector<double>> resolved_means(const SynthConfig& c);
/// Closed-form P(Y, S) as a joint over axes (Y, S).
info::DiscreteJoint label_joint(const SynthConfig& c);
/// Exact joint of (mixture component, S, Y). The component determines both
/// labels, so I(Z;S|Y) here is H(S|Y), the most any encoder can retain.
info::DiscreteJoint component_joint(const SynthConfig& c);

enum class Split { kTrain, kDev, kTest };

struct SplitMarginals {
  std::vector<std::size_t> y_counts;
  std::vector<std::size_t> s_counts;
};

class Dataset {
 public:
  /// Assigns disjoint train/dev/test splits via a seeded permutation.
  Dataset(std::vector<LabeledExample> examples, int num_classes, int num_sensitive,
          double train_fraction, double dev_fraction, std::uint64_t split_seed);

  const std::vector<LabeledExample>& examples() const noexcept { return examples_; }
  std::size_t size() const noexcept { return examples_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  int num_classes() const noexcept { return num_classes_; }
  int num_sensitive() const noexcept { return num_sensitive_; }
  const std::vector<std::size_t>& split(Split which) const;
  const SplitMarginals& train_marginals() const noexcept { return train_marginals_; }

 private:
  std::vector<LabeledExample> examples_;
  std::size_t dim_ = 0;
  int num_classes_ = 0;
  int num_sensitive_ = 0;
  std::vector<std::size_t> train_, dev_, test_;
  SplitMarginals train_marginals_;
};

struct Batch {
  ad::Tensor x;
  std::vector<int> y;
  std::vector<int> s;
  std::vector<std::size_t> index;

  std::size_t size() const noexcept { return y.size(); }
};

Dataset generate(const SynthConfig& cfg);

void write_csv(const Dataset& ds, const std::filesystem::path& path);
/// Expects a header `f0,...,f{D-1},y,s`. Label cardinalities are inferred
/// from the largest ids (at least 2 each).
Dataset load_csv(const std::filesystem::path& path, double train_fraction = 0.8,
                 double dev_fraction = 0.1, std::uint64_t split_seed = 0);

/// Rows `indices` of the dataset, in the given order.
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);
Batch gather(const Dataset& ds, Split which);

/// B distinct examples from one split, drawn without replacement.
Batch sample_batch(const Dataset& ds, Split which, std::size_t batch_size, Rng& rng);

}  // namespace clinic::data
