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

// Central finite-difference gradient checks for scalar graph functions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "clinic/autodiff.hpp"

namespace clinic::testing {

using GraphFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

inline double evaluate(const GraphFn& f, const std::vector<ad::Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  return f(g, vars).value()[0];
}

/// Largest relative error ||analytic − numeric|| / max(||analytic||, ||numeric||, floor)
/// over the inputs.
inline double gradcheck(const GraphFn& f, const std::vector<ad::Tensor>& inputs,
                        double h = 1e-6, double floor = 1e-6) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(g.variable(t));
  g.backward(f(g, vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ad::Tensor& analytic = vars[k].grad();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double numeric = (evaluate(f, plus) - evaluate(f, minus)) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), floor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace clinic::testing
