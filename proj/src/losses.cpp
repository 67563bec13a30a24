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

#include "clinic/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "clinic/errors.hpp"

namespace clinic::losses {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kS0: return "S0";
    case Strategy::kS1: return "S1";
    case Strategy::kS2: return "S2";
  }
  return "S1";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "S0") return Strategy::kS0;
  if (name == "S1") return Strategy::kS1;
  if (name == "S2") return Strategy::kS2;
  throw ConfigError("unknown sampling strategy '" + name + "' (expected S0, S1 or S2)");
}

void to_json(nlohmann::json& j, const RegularizerConfig& c) {
  j = {{"strategy", to_string(c.strategy)},
       {"tau_p", c.tau_p},
       {"tau_n", c.tau_n},
       {"normalize_latents", c.normalize_latents}};
}

void from_json(const nlohmann::json& j, RegularizerConfig& c) {
  RegularizerConfig d;
  c.strategy = strategy_from_string(j.value("strategy", to_string(d.strategy)));
  c.tau_p = j.value("tau_p", d.tau_p);
  c.tau_n = j.value("tau_n", d.tau_n);
  c.normalize_latents = j.value("normalize_latents", d.normalize_latents);
}

void validate(const RegularizerConfig& c) {
  if (!(c.tau_p > 0.0) || !(c.tau_n > 0.0)) {
    throw ConfigError("temperatures tau_p and tau_n must be strictly positive");
  }
}

std::size_t PairSets::active_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += active(i) ? 1 : 0;
  return n;
}

namespace {

// Uniform draw from {0..k-1} \ {exclude}; deterministic (no draw) when k == 2.
int draw_complement(int exclude, int k, Rng& rng) {
  if (k == 2) return 1 - exclude;
  std::uniform_int_distribution<int> pick(0, k - 2);
  const int v = pick(rng);
  return v < exclude ? v : v + 1;
}

}  // namespace

PairSets build_pair_sets(std::span<const int> y, std::span<const int> s, int num_classes,
                         int num_sensitive, Strategy strategy, Rng& rng) {
  const std::size_t b = s.size();
  const bool uses_y = strategy != Strategy::kS0;
  if (uses_y && y.size() != b) throw ShapeError("pair sets: y and s differ in length");
  if (num_sensitive < 2 || (uses_y && num_classes < 2)) {
    throw ConfigError("pair sets need at least two classes and two sensitive groups");
  }

  PairSets out;
  out.positives.resize(b);
  out.negatives.resize(b);
  out.y_bar.assign(b, -1);
  out.s_bar.assign(b, -1);
  for (std::size_t i = 0; i < b; ++i) {
    if (uses_y) out.y_bar[i] = draw_complement(y[i], num_classes, rng);
    out.s_bar[i] = draw_complement(s[i], num_sensitive, rng);
  }

  // Every P(i) and N(i) is a union of label cells, so copy from index buckets.
  const std::size_t ny = uses_y ? static_cast<std::size_t>(num_classes) : 1;
  const std::size_t ns = static_cast<std::size_t>(num_sensitive);
  std::vector<std::vector<std::size_t>> by_y(ny), by_s(ns), by_cell(ny * ns);
  for (std::size_t j = 0; j < b; ++j) {
    const int yj = uses_y ? y[j] : 0;
    if (s[j] < 0 || static_cast<std::size_t>(s[j]) >= ns || yj < 0 ||
        static_cast<std::size_t>(yj) >= ny) {
      throw DataError("pair sets: label out of range at row " + std::to_string(j));
    }
    by_y[static_cast<std::size_t>(yj)].push_back(j);
    by_s[static_cast<std::size_t>(s[j])].push_back(j);
    by_cell[static_cast<std::size_t>(yj) * ns + static_cast<std::size_t>(s[j])].push_back(j);
  }
  auto cell = [&](int yv, int sv) -> const std::vector<std::size_t>& {
    return by_cell[static_cast<std::size_t>(yv) * ns + static_cast<std::size_t>(sv)];
  };

  for (std::size_t i = 0; i < b; ++i) {
    auto& pos = out.positives[i];
    auto& neg = out.negatives[i];
    switch (strategy) {
      case Strategy::kS0: {
        pos = by_s[static_cast<std::size_t>(out.s_bar[i])];
        const auto& same = by_s[static_cast<std::size_t>(s[i])];
        neg.reserve(same.size() - 1);
        for (std::size_t j : same) {
          if (j != i) neg.push_back(j);
        }
        break;
      }
      case Strategy::kS1:
        pos = cell(y[i], out.s_bar[i]);
        neg = by_y[static_cast<std::size_t>(out.y_bar[i])];
        break;
      case Strategy::kS2:
        pos = cell(y[i], out.s_bar[i]);
        neg = cell(out.y_bar[i], s[i]);
        break;
    }
  }
  return out;
}

std::optional<double> clinic_contribution(std::span<const double> z_i, const ad::Tensor& z,
                                          std::span<const std::size_t> positives,
                                          std::span<const std::size_t> negatives,
                                          double tau_p, double tau_n) {
  if (positives.empty() || negatives.empty()) return std::nullopt;
  auto dot = [&](std::size_t j) {
    if (z_i.size() != z.cols()) throw ShapeError("clinic_contribution: latent width mismatch");
    double d = 0.0;
    const auto zj = z.row_span(j);
    for (std::size_t k = 0; k < z_i.size(); ++k) d += z_i[k] * zj[k];
    return d;
  };
  double pos = 0.0;
  for (std::size_t j : positives) pos += dot(j) / tau_p;
  pos /= static_cast<double>(positives.size());

  std::vector<double> neg;
  neg.reserve(negatives.size());
  for (std::size_t j : negatives) neg.push_back(dot(j) / tau_n);
  const double hi = *std::max_element(neg.begin(), neg.end());
  double acc = 0.0;
  for (double v : neg) acc += std::exp(v - hi);
  return pos - (hi + std::log(acc));
}

RegularizerTerm clinic_regularizer(ad::Graph& g, ad::Var z, const PairSets& pairs,
                                   const RegularizerConfig& cfg) {
  validate(cfg);
  if (z.graph != &g) throw Error("regularizer: latents belong to another graph");
  const std::size_t b = z.value().rows();
  if (pairs.size() != b) {
    throw ShapeError("regularizer: " + std::to_string(pairs.size()) + " pair sets for " +
                     std::to_string(b) + " latent rows");
  }
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < b; ++i) {
    if (pairs.active(i)) active.push_back(i);
  }
  if (active.empty()) throw NoUsablePairsError();

  ad::Var zn = cfg.normalize_latents ? ad::l2_normalize_rows(z) : z;
  ad::Var pos = ad::pair_dot_mean(zn, active, pairs.positives, 1.0 / cfg.tau_p);
  ad::Var lse = ad::pair_dot_log_sum_exp(zn, active, pairs.negatives, 1.0 / cfg.tau_n);
  ad::Var contrib = ad::sub(pos, lse);
  return {ad::scale(ad::sum(contrib), -1.0), active.size(), b - active.size()};
}

double clinic_regularizer(const ad::Tensor& z, const PairSets& pairs,
                          const RegularizerConfig& cfg) {
  ad::Graph g;
  return clinic_regularizer(g, g.constant(z), pairs, cfg).value.value()[0];
}

ad::Var cross_entropy(ad::Var logits, std::span<const int> y) {
  return ad::scale(ad::mean(ad::pick(ad::log_softmax(logits), y)), -1.0);
}

ad::Var weighted_cross_entropy(ad::Var logits, std::span<const int> y,
                               std::span<const double> weights) {
  if (weights.size() != y.size()) throw ShapeError("weighted CE: weight/label length mismatch");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ConfigError("weighted CE: weights must have positive sum");
  ad::Graph& g = *logits.graph;
  ad::Tensor w(weights.size(), 1, std::vector<double>(weights.begin(), weights.end()));
  ad::Var picked = ad::pick(ad::log_softmax(logits), y);
  return ad::scale(ad::sum(ad::mul(picked, g.constant(std::move(w)))), -1.0 / total);
}

double cross_entropy(const ad::Tensor& logits, std::span<const int> y) {
  ad::Graph g;
  return cross_entropy(g.constant(logits), y).value()[0];
}

ad::Var combined_loss(ad::Var ce, ad::Var reg, double lambda) {
  if (lambda == 0.0) return ce;
  return ad::add(ce, ad::scale(reg, lambda));
}

double combined_loss(double ce, double reg, double lambda) { return ce + lambda * reg; }

std::vector<double> default_lambda_grid() { return {0.001, 0.01, 0.1, 1.0, 10.0}; }

AdversarialTerms adv_regularizer(ad::Graph& g, ad::Var z, std::span<const int> s,
                                 const std::optional<model::ProbeParams>& adversary,
                                 bool freeze_adversary) {
  if (!adversary) throw ConfigError("adversarial regularizer requires adversary parameters");
  model::ForwardMode mode;
  mode.frozen = freeze_adversary;
  ad::Var logits = model::forward(g, *adversary, z, mode);
  ad::Var ce = cross_entropy(logits, s);
  return {ce, ad::scale(ce, -1.0)};
}

}  // namespace clinic::losses
