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

// Leakage probes, accuracy and GAP metrics, per-trial reports and the
// Pareto view over a set of trials.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/autodiff.hpp"
#include "clinic/data.hpp"
#include "clinic/model.hpp"

namespace clinic::eval {

struct ProbeConfig {
  std::size_t max_steps = 2000;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t warmup_steps = 0;
  double weight_decay = 0.01;
  std::size_t eval_every = 100;
  /// Evaluations without dev improvement before stopping.
  std::size_t patience = 5;
  /// Weight every (y, s) cell equally in the probe loss and in the reported
  /// accuracy, so a representation that only carries y scores chance.
  bool balanced = true;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

/// Frozen latents with their labels. `y` may be empty, in which case cells
/// are the sensitive groups alone.
struct ProbeSplit {
  ad::Tensor z;
  std::vector<int> s;
  std::vector<int> y;
};

struct ProbeResult {
  model::ProbeParams params;
  double dev_accuracy = 0.0;
  std::size_t steps = 0;
};

/// Per-row weights giving every non-empty (y, s) cell the same total mass;
/// they sum to 1.
std::vector<double> balanced_cell_weights(std::span<const int> y, std::span<const int> s);

/// Fresh probe trained on `train`, early-stopped on `dev` accuracy.
/// Throws DataError when `train` holds a single sensitive group.
ProbeResult train_probe(const ProbeSplit& train, const ProbeSplit& dev, int num_sensitive,
                        const ProbeConfig& cfg, std::uint64_t seed);

/// Accuracy of `probe` on `split`, cell-balanced when `balanced`.
double probe_accuracy(const model::ProbeParams& probe, const ProbeSplit& split, bool balanced);

double accuracy(std::span<const int> preds, std::span<const int> labels);
double weighted_accuracy(std::span<const int> preds, std::span<const int> labels,
                         std::span<const double> weights);

struct GapResult {
  double value = 0.0;
  /// Classes with no true members in one of the groups.
  std::vector<int> excluded_classes;
  std::vector<double> per_class;
};

/// RMS over classes of TPR(c | s=0) − TPR(c | s=1). Binary s only.
GapResult gap_tpr(std::span<const int> preds, std::span<const int> y, std::span<const int> s,
                  int num_classes);
/// sqrt(mean gap²).
double rms(std::span<const double> gaps);

struct TrialReport {
  std::string method;
  std::string strategy;
  double lambda = 0.0;
  double tau_p = 0.0;
  double tau_n = 0.0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  double main_acc = 0.0;
  double sensitive_acc = 0.0;
  /// Absent for non-binary s.
  std::optional<double> gap;
  double cond_mi = 0.0;
  std::size_t params_extra = 0;
  double wall_seconds = 0.0;
  /// "ok", "diverged" or "failed".
  std::string status = "ok";

  // Not part of the CSV row.
  std::size_t checkpoint_step = 0;
  std::size_t param_count = 0;
  double mean_step_seconds = 0.0;
  /// Measured trial time; wall_seconds carries it only when requested.
  double elapsed_seconds = 0.0;
  std::size_t skipped_batches = 0;
  std::vector<int> gap_excluded_classes;
  std::string message;
};

void to_json(nlohmann::json& j, const TrialReport& r);
void from_json(const nlohmann::json& j, TrialReport& r);

const std::vector<std::string>& trial_csv_columns();
void write_trial_csv_header(std::ostream& os);
void write_trial_csv_row(std::ostream& os, const TrialReport& r);
std::vector<TrialReport> read_trials_csv(const std::filesystem::path& path);

struct EvalConfig {
  ProbeConfig probe;
  std::size_t bins_per_dim = 2;
  std::size_t dims_used = 4;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Test-split main accuracy, probe sensitive accuracy (trained on train
/// latents, stopped on dev), GAP, discretized Î(Z;S|Y) and the parameter
/// overhead relative to encoder + head. Fills the metric fields of `base`.
TrialReport evaluate_checkpoint(const data::Dataset& ds, const model::ModelBundle& bundle,
                                const EvalConfig& cfg, std::uint64_t trial_seed,
                                TrialReport base = {});

struct ParetoRow {
  TrialReport report;
  bool dominant = false;
};

/// Rows stably sorted by λ; a row is dominant when no other successful row
/// has sensitive_acc ≤ and main_acc ≥ with one strict. Throws ConfigError on
/// duplicate (method, strategy, λ, τ_p, τ_n, B, seed) keys.
std::vector<ParetoRow> pareto_aggregate(std::vector<TrialReport> reports);
void write_pareto_csv(std::ostream& os, std::span<const ParetoRow> rows);

/// Mean accuracies per (method, strategy, λ) over successful trials.
struct CurvePoint {
  std::string series;  // "method/strategy"
  double lambda = 0.0;
  double main_acc = 0.0;
  double sensitive_acc = 0.0;
  std::size_t trials = 0;
};

std::vector<CurvePoint> accuracy_curves(std::span<const TrialReport> reports);
/// Long format: series,metric,x,y with x = λ.
void write_curves_csv(std::ostream& os, std::span<const CurvePoint> points);

}  // namespace clinic::eval
