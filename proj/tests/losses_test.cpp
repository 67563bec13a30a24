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

#include <cmath>
#include <random>

#include "clinic/errors.hpp"
#include "clinic/losses.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace clinic;
using ad::Tensor;
using losses::Strategy;

namespace {

Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Generic InfoNCE: −log exp(a·p/τ) / Σ_k exp(a·k/τ) over the candidate set.
double info_nce(const std::vector<double>& a, const std::vector<double>& p,
                const std::vector<std::vector<double>>& candidates, double tau) {
  auto dot = [&](const std::vector<double>& u) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * u[k];
    return s;
  };
  double denom = 0.0;
  for (const auto& c : candidates) denom += std::exp(dot(c) / tau);
  return -(dot(p) / tau - std::log(denom));
}

std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (auto s : {Strategy::kS0, Strategy::kS1, Strategy::kS2}) {
    CHECK(losses::strategy_from_string(losses::to_string(s)) == s);
  }
  CHECK_THROWS_AS(losses::strategy_from_string("S3"), ConfigError);
}

TEST_CASE("temperatures must be positive") {
  losses::RegularizerConfig c;
  c.tau_p = 0.0;
  CHECK_THROWS_AS(losses::validate(c), ConfigError);
  c.tau_p = 0.5;
  c.tau_n = -1.0;
  CHECK_THROWS_AS(losses::validate(c), ConfigError);
}

TEST_CASE("S1 pair sets on a small binary batch") {
  // (y, s): 0:(0,0) 1:(0,1) 2:(1,0) 3:(1,1)
  const std::vector<int> y = {0, 0, 1, 1}, s = {0, 1, 0, 1};
  Rng rng(0);
  const auto p = losses::build_pair_sets(y, s, 2, 2, Strategy::kS1, rng);
  CHECK(p.positives[0] == std::vector<std::size_t>{1});
  CHECK(p.negatives[0] == std::vector<std::size_t>{2, 3});
  const auto p2 = losses::build_pair_sets(y, s, 2, 2, Strategy::kS2, rng);
  CHECK(p2.negatives[0] == std::vector<std::size_t>{2});
  const auto p0 = losses::build_pair_sets({}, s, 2, 2, Strategy::kS0, rng);
  CHECK(p0.positives[0] == std::vector<std::size_t>{1, 3});
  CHECK(p0.negatives[0] == std::vector<std::size_t>{2});
  CHECK(p0.y_bar[0] == -1);
}

TEST_CASE("S0 never reads y") {
  std::mt19937_64 gen(3);
  const auto s = random_labels(12, 2, gen);
  const auto y1 = random_labels(12, 2, gen);
  const auto y2 = random_labels(12, 2, gen);
  Rng r1(5), r2(5);
  const auto a = losses::build_pair_sets(y1, s, 2, 2, Strategy::kS0, r1);
  const auto b = losses::build_pair_sets(y2, s, 2, 2, Strategy::kS0, r2);
  CHECK(a.positives == b.positives);
  CHECK(a.negatives == b.negatives);
}

TEST_CASE("binary complements do not consume randomness") {
  const std::vector<int> y = {0, 1, 1}, s = {1, 0, 1};
  Rng rng(9);
  const auto before = rng;
  losses::build_pair_sets(y, s, 2, 2, Strategy::kS1, rng);
  CHECK(rng == before);
}

TEST_CASE("multi-class complements are uniform over the other labels") {
  std::vector<int> y(3000, 1), s(3000, 0);
  Rng rng(2);
  const auto p = losses::build_pair_sets(y, s, 3, 2, Strategy::kS1, rng);
  std::size_t zeros = 0;
  for (int v : p.y_bar) {
    CHECK(v != 1);
    zeros += v == 0;
  }
  CHECK(static_cast<double>(zeros) / 3000.0 == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("pair sets match predicate enumeration on every binary labeling") {
  CHECK(oracle::enumerate_pair_sets(8) == 0);
}

TEST_CASE("contribution hand examples") {
  const Tensor z(2, 2, {1, 0, 0, 1});
  const std::vector<double> zi = {1, 0};
  const std::size_t p[] = {0};
  const std::size_t n[] = {1};
  CHECK(*losses::clinic_contribution(zi, z, p, n, 1.0, 1.0) == doctest::Approx(1.0));

  const Tensor same(3, 2, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
  const std::vector<double> a = {0.6, 0.8};
  const std::size_t p1[] = {1};
  const std::size_t n1[] = {2};
  CHECK(*losses::clinic_contribution(a, same, p1, n1, 0.7, 0.7) == doctest::Approx(0.0));

  const std::size_t none[] = {0};
  CHECK_FALSE(losses::clinic_contribution(a, same, std::span<const std::size_t>{}, n1, 1, 1));
  CHECK_FALSE(losses::clinic_contribution(a, same, none, std::span<const std::size_t>{}, 1, 1));
}

TEST_CASE("doubling tau_n only changes the log-sum-exp term") {
  std::mt19937_64 gen(4);
  const Tensor z = randn(6, 3, gen);
  const std::vector<double> zi(z.row_span(0).begin(), z.row_span(0).end());
  const std::size_t p[] = {1, 2};
  const std::size_t n[] = {3, 4, 5};
  auto direct = [&](double tn) {
    double pos = 0.0, lse = 0.0;
    auto dot = [&](std::size_t j) { return zi[0] * z(j, 0) + zi[1] * z(j, 1) + zi[2] * z(j, 2); };
    for (auto j : p) pos += dot(j) / 0.5;
    for (auto j : n) lse += std::exp(dot(j) / tn);
    return pos / 2.0 - std::log(lse);
  };
  for (double tn : {0.3, 0.6}) {
    CHECK(std::abs(*losses::clinic_contribution(zi, z, p, n, 0.5, tn) - direct(tn)) < 1e-12);
  }
}

TEST_CASE("shifting negative similarities shifts the contribution by -c/tau_n") {
  // With one-hot latents the similarity to each negative is a single coordinate.
  const double tn = 0.4, c = 0.3;
  Tensor z(4, 3, {1, 0, 0, 1, 0, 0, 0, 0.2, 0, 0, -0.5, 0});
  const std::vector<double> zi = {1, 0, 0};
  const std::size_t p[] = {1};
  const std::size_t n[] = {2, 3};
  const double base = *losses::clinic_contribution(zi, z, p, n, 1.0, tn);
  Tensor shifted = z;
  shifted(2, 0) += c;
  shifted(3, 0) += c;
  const double moved = *losses::clinic_contribution(zi, shifted, p, n, 1.0, tn);
  CHECK(moved - base == doctest::Approx(-c / tn).epsilon(1e-12));
}

TEST_CASE("single-positive contribution is negative InfoNCE") {
  std::mt19937_64 gen(6);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor z = randn(5, 4, gen);
    auto row = [&](std::size_t r) {
      return std::vector<double>(z.row_span(r).begin(), z.row_span(r).end());
    };
    const std::size_t p[] = {1};
    const std::size_t n[] = {2, 3, 4};
    const double tau = 0.25 + 0.1 * rep;
    const double c = *losses::clinic_contribution(row(0), z, p, n, tau, tau);
    CHECK(std::abs(-c - info_nce(row(0), row(1), {row(2), row(3), row(4)}, tau)) < 1e-10);
  }
}

TEST_CASE("regularizer equals the direct-summation oracle") {
  std::mt19937_64 gen(21);
  std::uniform_int_distribution<std::size_t> size(4, 16);
  const std::size_t widths[] = {5, 8, 16, 32};
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t b = size(gen);
    const Tensor z = randn(b, widths[rep % 4], gen);
    const auto y = random_labels(b, 2 + rep % 2, gen);
    const auto s = random_labels(b, 2, gen);
    const auto strategy = static_cast<Strategy>(rep % 3);
    Rng rng(static_cast<std::uint64_t>(rep));
    const auto pairs = losses::build_pair_sets(y, s, 2 + rep % 2, 2, strategy, rng);
    if (pairs.active_count() == 0) continue;
    losses::RegularizerConfig cfg{strategy, 0.3 + 0.01 * rep, 0.7, rep % 4 != 0};
    const double got = losses::clinic_regularizer(z, pairs, cfg);
    CHECK(std::abs(got - oracle::regularizer(z, pairs, cfg.tau_p, cfg.tau_n,
                                              cfg.normalize_latents)) < 1e-10);
  }
}

TEST_CASE("batches without usable pairs are rejected") {
  const std::vector<int> y = {0, 0, 0}, s = {1, 1, 1};
  Rng rng(1);
  const auto pairs = losses::build_pair_sets(y, s, 2, 2, Strategy::kS1, rng);
  CHECK(pairs.active_count() == 0);
  std::mt19937_64 gen(1);
  CHECK_THROWS_AS(losses::clinic_regularizer(randn(3, 2, gen), pairs, {}), NoUsablePairsError);
}

TEST_CASE("inactive anchors are skipped and counted") {
  // Anchor 2 is the only (1,0) sample and has no positive.
  const std::vector<int> y = {0, 0, 1}, s = {0, 1, 0};
  Rng rng(1);
  const auto pairs = losses::build_pair_sets(y, s, 2, 2, Strategy::kS1, rng);
  ad::Graph g;
  std::mt19937_64 gen(2);
  const auto term = losses::clinic_regularizer(g, g.constant(randn(3, 2, gen)), pairs, {});
  CHECK(term.active == 2);
  CHECK(term.skipped == 1);
}

TEST_CASE("cross-entropy values") {
  ad::Graph g;
  const std::vector<int> y = {0, 1};
  CHECK(losses::cross_entropy(Tensor(2, 2), y) == doctest::Approx(std::log(2.0)));
  const double ce = losses::cross_entropy(Tensor(1, 3, {2, 0, 0}), std::vector<int>{0});
  CHECK(ce == doctest::Approx(-std::log(std::exp(2.0) / (std::exp(2.0) + 2.0))));
  const std::vector<double> w = {3.0, 1.0};
  ad::Var logits = g.constant(Tensor(2, 2, {1, 0, 0, 1}));
  const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(losses::weighted_cross_entropy(logits, std::vector<int>{0, 0}, w).value()[0] ==
        doctest::Approx((3.0 * -std::log(p) + 1.0 * -std::log(1.0 - p)) / 4.0));
}

TEST_CASE("lambda zero returns the cross-entropy node itself") {
  ad::Graph g;
  ad::Var ce = g.variable(Tensor::scalar(0.7));
  ad::Var r = g.variable(Tensor::scalar(5.0));
  CHECK(losses::combined_loss(ce, r, 0.0).id == ce.id);
  CHECK(losses::combined_loss(ce, r, 2.0).value()[0] == doctest::Approx(10.7));
  CHECK(losses::combined_loss(0.7, 5.0, 2.0) == doctest::Approx(10.7));
}

TEST_CASE("default lambda grid") {
  CHECK(losses::default_lambda_grid() == std::vector<double>{0.001, 0.01, 0.1, 1.0, 10.0});
}

TEST_CASE("adversarial terms") {
  std::mt19937_64 gen(3);
  ad::Graph g;
  ad::Var z = g.constant(randn(4, 3, gen));
  const std::vector<int> s = {0, 1, 1, 0};
  CHECK_THROWS_AS(losses::adv_regularizer(g, z, s, std::nullopt), ConfigError);
  Rng rng(1);
  std::optional<model::ProbeParams> psi = model::make_probe(3, 2, rng);
  const auto t = losses::adv_regularizer(g, z, s, psi);
  CHECK(t.encoder_term.value()[0] == doctest::Approx(-t.adversary_ce.value()[0]));
}

TEST_CASE("full losses match finite differences") {
  std::mt19937_64 gen(8);
  for (auto strategy : {Strategy::kS0, Strategy::kS1, Strategy::kS2}) {
    for (bool normalize : {true, false}) {
      const auto y = std::vector<int>{0, 0, 1, 1, 0, 1, 0, 1};
      const auto s = std::vector<int>{0, 1, 0, 1, 1, 0, 0, 1};
      Rng rng(4);
      const auto pairs = losses::build_pair_sets(y, s, 2, 2, strategy, rng);
      losses::RegularizerConfig cfg{strategy, 0.3, 0.8, normalize};
      auto f = [&](ad::Graph& g, const std::vector<ad::Var>& v) {
        return losses::clinic_regularizer(g, v[0], pairs, cfg).value;
      };
      CAPTURE(losses::to_string(strategy));
      CHECK(testing::gradcheck(f, {randn(8, 4, gen)}) < 1e-4);
      CHECK(testing::gradcheck(f, {randn(8, 16, gen)}) < 1e-4);
    }
  }
  const std::vector<int> y = {0, 2, 1, 1};
  auto ce = [&](ad::Graph&, const std::vector<ad::Var>& v) { return losses::cross_entropy(v[0], y); };
  CHECK(testing::gradcheck(ce, {randn(4, 3, gen)}) < 1e-6);
}
