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

// Training objectives: task cross-entropy, the parameter-free conditional
// contrastive regularizer with its pair-sampling strategies, and the
// adversarial baseline term.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/autodiff.hpp"
#include "clinic/model.hpp"
#include "clinic/rng.hpp"

namespace clinic::losses {

/// S0: sensitive-only pairs (never reads y).
/// S1: positives share y with the complementary group s̄; negatives have class ȳ.
/// S2: as S1, but negatives must also share the anchor's group.
enum class Strategy { kS0, kS1, kS2 };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct RegularizerConfig {
  Strategy strategy = Strategy::kS1;
  double tau_p = 0.5;
  double tau_n = 0.5;
  bool normalize_latents = true;
};

void to_json(nlohmann::json& j, const RegularizerConfig& c);
void from_json(const nlohmann::json& j, RegularizerConfig& c);
void validate(const RegularizerConfig& c);

struct PairSets {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
  /// Sampled complements per anchor; y_bar is −1 under S0.
  std::vector<int> y_bar;
  std::vector<int> s_bar;

  std::size_t size() const noexcept { return positives.size(); }
  bool active(std::size_t i) const {
    return !positives[i].empty() && !negatives[i].empty();
  }
  std::size_t active_count() const;
};

/// Draws ȳ_i uniform on Y∖{y_i} and s̄_i uniform on S∖{s_i} (no draw when the
/// label set is binary), then fills P(i) and N(i) per the strategy. Under S0
/// `y` is never read and may be empty.
PairSets build_pair_sets(std::span<const int> y, std::span<const int> s, int num_classes,
                         int num_sensitive, Strategy strategy, Rng& rng);

/// C_i = mean_{p∈P} z_i·z_p/τ_p − log Σ_{n∈N} exp(z_i·z_n/τ_n). Empty P or N
/// yields nullopt (inactive anchor).
std::optional<double> clinic_contribution(std::span<const double> z_i, const ad::Tensor& z,
                                          std::span<const std::size_t> positives,
                                          std::span<const std::size_t> negatives,
                                          double tau_p, double tau_n);

struct RegularizerTerm {
  ad::Var value;  // R = −Σ_{active i} C_i
  std::size_t active = 0;
  std::size_t skipped = 0;
};

/// Throws NoUsablePairsError when no anchor is active.
RegularizerTerm clinic_regularizer(ad::Graph& g, ad::Var z, const PairSets& pairs,
                                   const RegularizerConfig& cfg);
double clinic_regularizer(const ad::Tensor& z, const PairSets& pairs,
                          const RegularizerConfig& cfg);

/// Mean over rows of −log softmax(logits)[y].
ad::Var cross_entropy(ad::Var logits, std::span<const int> y);
/// Σ w_i·(−log softmax_i[y_i]) / Σ w_i.
ad::Var weighted_cross_entropy(ad::Var logits, std::span<const int> y,
                               std::span<const double> weights);
double cross_entropy(const ad::Tensor& logits, std::span<const int> y);

/// ce + λ·R.
ad::Var combined_loss(ad::Var ce, ad::Var reg, double lambda);
double combined_loss(double ce, double reg, double lambda);

std::vector<double> default_lambda_grid();

struct AdversarialTerms {
  ad::Var adversary_ce;   // minimized by ψ
  ad::Var encoder_term;   // −adversary_ce, minimized by θ
};

/// Adversary ψ applied to latents z. With `freeze_adversary` ψ is bound as a
/// constant. Throws ConfigError when ψ is absent.
AdversarialTerms adv_regularizer(ad::Graph& g, ad::Var z, std::span<const int> s,
                                 const std::optional<model::ProbeParams>& adversary,
                                 bool freeze_adversary = false);

}  // namespace clinic::losses
