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

// Direct-summation reference implementations shared by unit and acceptance tests.
// None of these call into the library code they check.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "clinic/autodiff.hpp"
#include "clinic/infotheory.hpp"
#include "clinic/losses.hpp"

namespace clinic::oracle {

/// R recomputed with plain loops from the anchor sets.
inline double regularizer(const ad::Tensor& z_raw, const losses::PairSets& pairs, double tp,
                          double tn, bool normalize) {
  const std::size_t b = z_raw.rows(), d = z_raw.cols();
  std::vector<std::vector<double>> z(b, std::vector<double>(d));
  for (std::size_t i = 0; i < b; ++i) {
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += z_raw(i, k) * z_raw(i, k);
    n = normalize ? std::sqrt(n) : 1.0;
    for (std::size_t k = 0; k < d; ++k) z[i][k] = z_raw(i, k) / n;
  }
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += z[i][k] * z[j][k];
    return s;
  };
  double r = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& P = pairs.positives[i];
    const auto& N = pairs.negatives[i];
    if (P.empty() || N.empty()) continue;
    double lse = 0.0;
    for (auto n : N) lse += std::exp(dot(i, n) / tn);
    lse = std::log(lse);
    double c = 0.0;
    for (auto p : P) c += dot(i, p) / tp - lse;
    r -= c / static_cast<double>(P.size());
  }
  return r;
}

/// Positive and negative sets of anchor i from the membership predicates, for
/// binary labels where the sampled complements are forced.
inline void pair_predicates(const std::vector<int>& y, const std::vector<int>& s, std::size_t i,
                            losses::Strategy strategy, std::vector<std::size_t>& pos,
                            std::vector<std::size_t>& neg) {
  pos.clear();
  neg.clear();
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (j == i) continue;
    const bool same_s = s[j] == s[i];
    bool in_p = false, in_n = false;
    if (strategy == losses::Strategy::kS0) {
      in_p = !same_s;
      in_n = same_s;
    } else {
      const bool same_y = y[j] == y[i];
      in_p = same_y && !same_s;
      in_n = !same_y && (strategy == losses::Strategy::kS1 || same_s);
    }
    if (in_p) pos.push_back(j);
    if (in_n) neg.push_back(j);
  }
}

/// Checks build_pair_sets on every binary labeling of every batch size in
/// [2, max_batch]. Returns the number of mismatching anchors.
inline std::size_t enumerate_pair_sets(std::size_t max_batch) {
  std::size_t bad = 0;
  std::vector<std::size_t> pos, neg;
  for (std::size_t b = 2; b <= max_batch; ++b) {
    for (std::uint32_t code = 0; code < (1u << (2 * b)); ++code) {
      std::vector<int> y(b), s(b);
      for (std::size_t i = 0; i < b; ++i) {
        y[i] = static_cast<int>((code >> (2 * i)) & 1u);
        s[i] = static_cast<int>((code >> (2 * i + 1)) & 1u);
      }
      for (auto strategy : {losses::Strategy::kS0, losses::Strategy::kS1, losses::Strategy::kS2}) {
        Rng rng(code);
        const auto got = losses::build_pair_sets(y, s, 2, 2, strategy, rng);
        for (std::size_t i = 0; i < b; ++i) {
          pair_predicates(y, s, i, strategy, pos, neg);
          if (got.positives[i] != pos || got.negatives[i] != neg) ++bad;
        }
      }
    }
  }
  return bad;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

/// I(A;B) = H(A) + H(B) − H(A,B) on a row-major a×b table.
inline double entropy_mi(const std::vector<double>& p, std::size_t na, std::size_t nb) {
  std::vector<double> pa(na, 0.0), pb(nb, 0.0);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t b = 0; b < nb; ++b) {
      pa[a] += p[a * nb + b];
      pb[b] += p[a * nb + b];
    }
  }
  return entropy(pa) + entropy(pb) - entropy(p);
}

/// Σ_y p(y) I(Z;S | Y=y) on a (Z, S, Y) table, via entropy_mi.
inline double entropy_conditional_mi(const std::vector<double>& p, std::size_t nz,
                                     std::size_t ns, std::size_t ny) {
  double cond = 0.0;
  for (std::size_t y = 0; y < ny; ++y) {
    std::vector<double> slice(nz * ns);
    double mass = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t s = 0; s < ns; ++s) {
        slice[z * ns + s] = p[(z * ns + s) * ny + y];
        mass += slice[z * ns + s];
      }
    }
    if (mass == 0.0) continue;
    for (auto& v : slice) v /= mass;
    cond += mass * entropy_mi(slice, nz, ns);
  }
  return cond;
}

/// Dirichlet-like random (Z, S, Y) joint; zero_rate empties cells at random.
inline info::DiscreteJoint random_joint(std::size_t nz, std::size_t ns, std::size_t ny,
                                        std::mt19937_64& rng, double zero_rate = 0.0) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::bernoulli_distribution drop(zero_rate);
  std::vector<double> counts(nz * ns * ny);
  for (auto& c : counts) c = drop(rng) ? 0.0 : g(rng);
  counts[0] += 1e-3;
  return info::DiscreteJoint::from_counts({{"Z", nz}, {"S", ns}, {"Y", ny}}, counts);
}

}  // namespace clinic::oracle
