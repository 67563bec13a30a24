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
#include <numbers>
#include <random>

#include "clinic/data.hpp"
#include "clinic/errors.hpp"
#include "clinic/infotheory.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace clinic;
using info::DiscreteJoint;

namespace {

const double kLn2 = std::numbers::ln2;

using oracle::entropy;
using oracle::random_joint;

DiscreteJoint two(std::vector<double> p) {
  const std::size_t nb = p.size() / 2;
  return DiscreteJoint({{"A", 2}, {"B", nb}}, std::move(p));
}

}  // namespace

TEST_CASE("joint validation") {
  CHECK_THROWS_AS(DiscreteJoint({{"A", 2}}, {0.5, 0.6}), ConfigError);
  CHECK_THROWS_AS(DiscreteJoint({{"A", 2}}, {1.5, -0.5}), ConfigError);
  CHECK_THROWS_AS(DiscreteJoint({{"A", 3}}, {0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(DiscreteJoint::from_counts({{"A", 2}}, {0.0, 0.0}), ConfigError);
  CHECK_NOTHROW(DiscreteJoint({{"A", 2}}, {0.5, 0.5 + 1e-13}));
}

TEST_CASE("exact MI examples") {
  CHECK(info::exact_mi(two({0.25, 0.25, 0.25, 0.25})) == doctest::Approx(0.0));
  CHECK(std::abs(info::exact_mi(two({0.5, 0.0, 0.0, 0.5})) - kLn2) < 1e-12);
  CHECK(info::exact_mi(two({0.4, 0.1, 0.1, 0.4})) ==
        doctest::Approx(0.8 * std::log(1.6) + 0.2 * std::log(0.4)).epsilon(1e-12));
  CHECK(info::exact_mi(two({0.4, 0.1, 0.1, 0.4})) == doctest::Approx(0.192745).epsilon(1e-6));
  CHECK(info::exact_mi(two({0.375, 0.125, 0.125, 0.375})) == doctest::Approx(0.1308).epsilon(0.01));
}

TEST_CASE("exact MI needs a rank-2 joint") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(info::exact_mi(random_joint(2, 2, 2, rng)), Error);
}

TEST_CASE("tied binary joint") {
  std::vector<double> p(8, 0.0);
  p[0] = 0.5;  // (0,0,0)
  p[7] = 0.5;  // (1,1,1)
  const DiscreteJoint tied({{"Z", 2}, {"S", 2}, {"Y", 2}}, p);
  const auto d = info::decompose(tied);
  CHECK(std::abs(d.mutual_information - kLn2) < 1e-12);
  CHECK(std::abs(d.conditional) < 1e-12);
  CHECK(std::abs(d.interaction - kLn2) < 1e-12);
}

TEST_CASE("conditional MI degenerate cases") {
  std::mt19937_64 rng(2);
  const auto j = random_joint(3, 2, 1, rng);
  const std::size_t zs[] = {0, 1};
  CHECK(std::abs(info::conditional_mi(j) - info::exact_mi(j.marginal(zs))) < 1e-12);

  // Z ⟂ S given Y: p(z,s,y) = p(y) p(z|y) p(s|y).
  std::vector<double> p;
  const double py[] = {0.3, 0.7};
  const double pz[2][3] = {{0.2, 0.5, 0.3}, {0.6, 0.1, 0.3}};
  const double ps[2][2] = {{0.9, 0.1}, {0.25, 0.75}};
  for (int z = 0; z < 3; ++z)
    for (int s = 0; s < 2; ++s)
      for (int y = 0; y < 2; ++y) p.push_back(py[y] * pz[y][z] * ps[y][s]);
  const DiscreteJoint ci({{"Z", 3}, {"S", 2}, {"Y", 2}}, p);
  CHECK(std::abs(info::conditional_mi(ci)) < 1e-12);
  CHECK(info::exact_mi(ci.marginal(zs)) > 1e-3);
}

TEST_CASE("information identities on random joints") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> card(2, 5);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t nz = card(rng), ns = card(rng), ny = card(rng);
    const auto j = random_joint(nz, ns, ny, rng, rep % 3 == 0 ? 0.3 : 0.0);
    const auto d = info::decompose(j);
    CHECK(std::abs(d.mutual_information - d.conditional - d.interaction) < 1e-12);
    CHECK(d.mutual_information >= 0.0);
    CHECK(d.conditional >= 0.0);
    CHECK(info::interaction_info(j) == d.interaction);

    // Entropy-form oracles.
    const std::size_t zs[] = {0, 1};
    const auto pzs = j.marginal(zs).probs();
    CHECK(std::abs(d.mutual_information - oracle::entropy_mi(pzs, nz, ns)) < 1e-12);
    const double cond = oracle::entropy_conditional_mi(j.probs(), nz, ns, ny);
    CHECK(std::abs(d.conditional - cond) < 1e-12);
  }
}

TEST_CASE("MI is zero on product joints") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(3), b(4), p;
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    for (double x : a)
      for (double y : b) p.push_back(x * y);
    const auto j = DiscreteJoint::from_counts({{"A", 3}, {"B", 4}}, p);
    CHECK(std::abs(info::exact_mi(j)) < 1e-12);
  }
}

TEST_CASE("relabelling invariance and data processing") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const auto j = random_joint(4, 3, 2, rng);
    const auto d = info::decompose(j);
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t axis : {0u, 2u}) {
      const auto r = axis == 0 ? j.relabel(0, perm) : j.relabel(2, std::vector<std::size_t>{1, 0});
      const auto dr = info::decompose(r);
      CHECK(std::abs(dr.mutual_information - d.mutual_information) < 1e-12);
      CHECK(std::abs(dr.conditional - d.conditional) < 1e-12);
    }
    const std::size_t groups[] = {0, 1, 0, 1};
    const auto merged = j.merge(0, groups, 2);
    const std::size_t zs[] = {0, 1};
    CHECK(info::exact_mi(merged.marginal(zs)) <= info::exact_mi(j.marginal(zs)) + 1e-12);
  }
}

TEST_CASE("joint JSON round-trip") {
  std::mt19937_64 rng(6);
  const auto j = random_joint(2, 3, 2, rng);
  nlohmann::json doc = j;
  const auto back = info::joint_from_json(doc);
  CHECK(back.axes() == j.axes());
  CHECK(back.probs() == j.probs());
  CHECK_THROWS_AS(info::joint_from_json(nlohmann::json{{"axes", 3}}), ConfigError);
}

TEST_CASE("discretization") {
  ad::Tensor constant(10, 1, 3.0);
  const auto one = info::discretize_latents(constant, 2, 1);
  CHECK(std::all_of(one.begin(), one.end(), [&](std::size_t b) { return b == one[0]; }));

  ad::Tensor z(8, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    z(i, 0) = static_cast<double>(i);
    z(i, 1) = i % 2 == 0 ? -1.0 : 1.0;
  }
  const auto half = info::discretize_latents(z, 2, 1);
  CHECK(std::count(half.begin(), half.end(), 0u) == 4);
  CHECK(half[0] == 0);
  CHECK(half[7] == 1);
  const auto both = info::discretize_latents(z, 2, 2);
  CHECK(both[0] == 0);
  CHECK(both[1] == 2);
  CHECK(both[7] == 3);
  CHECK_THROWS_AS(info::discretize_latents(z, 1, 1), ConfigError);
  CHECK_THROWS_AS(info::discretize_latents(z, 2, 3), ConfigError);
}

TEST_CASE("empirical joints") {
  const std::size_t zb[] = {0};
  const int s1[] = {1}, y1[] = {0};
  const auto point = info::empirical_joint(zb, s1, y1, 2, 2, 2);
  const std::size_t at[] = {0, 1, 0};
  CHECK(point.at(at) == 1.0);

  // Hand-counted six-sample table.
  const std::size_t z[] = {0, 0, 1, 1, 1, 0};
  const int s[] = {0, 1, 1, 1, 0, 0};
  const int y[] = {0, 0, 1, 1, 0, 1};
  const auto j = info::empirical_joint(z, s, y, 2, 2, 2);
  const std::size_t c000[] = {0, 0, 0}, c010[] = {0, 1, 0}, c111[] = {1, 1, 1},
                    c100[] = {1, 0, 0}, c001[] = {0, 0, 1}, c011[] = {0, 1, 1};
  CHECK(j.at(c000) == doctest::Approx(1.0 / 6));
  CHECK(j.at(c010) == doctest::Approx(1.0 / 6));
  CHECK(j.at(c111) == doctest::Approx(2.0 / 6));
  CHECK(j.at(c100) == doctest::Approx(1.0 / 6));
  CHECK(j.at(c001) == doctest::Approx(1.0 / 6));
  CHECK(j.at(c011) == 0.0);

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> u(0, 1);
  std::vector<std::size_t> zz(40000);
  std::vector<int> ss(40000), yy(40000);
  for (std::size_t i = 0; i < zz.size(); ++i) {
    zz[i] = static_cast<std::size_t>(u(rng));
    ss[i] = u(rng);
    yy[i] = u(rng);
  }
  const auto uniform = info::empirical_joint(zz, ss, yy, 2, 2, 2);
  for (double p : uniform.probs()) {
    CHECK(p == doctest::Approx(0.125).epsilon(0.05));
  }
  const int bad[] = {2};
  CHECK_THROWS_AS(info::empirical_joint(zb, bad, y1, 2, 2, 2), ConfigError);
}

TEST_CASE("empirical conditional MI on noisy latents matches the closed form") {
  data::SynthConfig cfg;
  cfg.rho = 0.8;
  cfg.n = 50000;
  const auto ds = data::generate(cfg);
  const double sigma = 0.5;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, sigma);
  ad::Tensor z(ds.size(), 1);
  std::vector<int> s, y;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds.examples()[i];
    z(i, 0) = e.s + noise(rng);
    s.push_back(e.s);
    y.push_back(e.y);
  }
  const auto bins = info::discretize_latents(z, 2, 1);
  const double got = info::conditional_mi(info::empirical_joint(bins, s, y, 2, 2, 2));

  // The median cut sits at 1/2, so the bin is s passed through a binary
  // symmetric channel with flip rate Φ(−1/(2σ)).
  const double flip = 0.5 * std::erfc(1.0 / (2.0 * sigma) / std::sqrt(2.0));
  auto h2 = [](double p) { return entropy({p, 1.0 - p}); };
  const auto ys = data::label_joint(cfg);
  double expected = 0.0;
  for (std::size_t yv = 0; yv < 2; ++yv) {
    const std::size_t i0[] = {yv, 0}, i1[] = {yv, 1};
    const double py = ys.at(i0) + ys.at(i1);
    const double q = ys.at(i1) / py;
    const double r = q * (1.0 - flip) + (1.0 - q) * flip;
    expected += py * (h2(r) - h2(flip));
  }
  CHECK(std::abs(got - expected) < 0.02);
}

TEST_CASE("bound right-hand side") {
  CHECK(info::bound_rhs(0.5, 4, 0.0) == doctest::Approx(4.0 * kLn2).epsilon(1e-12));
  CHECK(info::bound_rhs(0.5, 4, 1e300) < -1e290);
  const double p0 = 0.25;
  CHECK(info::bound_rhs(p0, 128, 64.0) ==
        doctest::Approx(std::log(32.0) / 0.25 + std::log(96.0) / 0.75 - 0.5).epsilon(1e-12));
}

TEST_CASE("bound check bookkeeping") {
  const int y[] = {0, 0, 1, 1};
  const int s[] = {0, 1, 0, 1};
  const auto r = info::theorem1_check(y, s, 0.0, info::ClassConditionalMi{0.1, 0.3});
  CHECK(r.p0 == 0.5);
  CHECK(r.batch_size == 4);
  CHECK(r.lhs == doctest::Approx(0.8));
  CHECK(r.rhs == doctest::Approx(4.0 * kLn2));
  CHECK_FALSE(r.holds);
  const auto trivial = info::theorem1_check(y, s, 1e6, info::ClassConditionalMi{});
  CHECK(trivial.holds);
  const int one_class[] = {1, 1, 1, 1};
  CHECK_THROWS_AS(info::theorem1_check(one_class, s, 0.0, info::ClassConditionalMi{}),
                  ConfigError);
  const int three[] = {0, 1, 2, 1};
  CHECK_THROWS_AS(info::theorem1_check(three, s, 0.0, info::ClassConditionalMi{}),
                  ConfigError);

  ad::Tensor z(4, 1, {-1, 1, -1, 1});
  const auto e = info::theorem1_check(z, y, s, 0.0, 2, 1);
  // Each class has the bin equal to s, so I(Z;S|Y=y) = ln 2.
  CHECK(e.lhs == doctest::Approx(4.0 * kLn2));
  CHECK(e.holds);
  nlohmann::json doc = e;
  CHECK(doc.at("holds").get<bool>());
  CHECK(doc.contains("R_over_B"));
}
