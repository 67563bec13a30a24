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

// Grid sweeps over method × strategy × λ × temperatures × batch size × seed,
// with resumable per-trial artifacts and bound monitoring.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/config.hpp"
#include "clinic/eval.hpp"
#include "clinic/infotheory.hpp"

namespace clinic::sweep {

struct SweepSpec {
  /// Partial experiment config merged over the defaults.
  nlohmann::json experiment = nlohmann::json::object();
  std::vector<std::string> methods = {"CE", "CLINIC", "ADV"};
  std::vector<std::string> strategies = {"S1"};
  std::vector<double> lambdas = losses::default_lambda_grid();
  std::vector<double> taus_p = {0.5};
  std::vector<double> taus_n = {0.5};
  std::vector<std::size_t> batch_sizes = {256};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "sweep";
  std::size_t threads = 1;
  bool monitor_bound = true;
  /// Off by default so trials.csv is reproducible byte for byte; measured
  /// times always go to timing.csv and the per-trial report.json.
  bool record_wall_time = false;
};

void to_json(nlohmann::json& j, const SweepSpec& s);
void from_json(const nlohmann::json& j, SweepSpec& s);
void validate(const SweepSpec& s);

struct TrialKey {
  std::string method;
  std::string strategy;  // "none" for CE and ADV
  double lambda = 0.0;
  double tau_p = 0.0;
  double tau_n = 0.0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;

  /// Directory-safe identifier.
  std::string id() const;
  friend bool operator==(const TrialKey&, const TrialKey&) = default;
};

/// Grid cells in a fixed order. CE has no λ, strategy or temperatures; ADV
/// has no strategy or temperatures; any λ = 0 cell is the CE cell. Duplicates
/// after this collapse are dropped, keeping the first occurrence.
std::vector<TrialKey> expand_grid(const SweepSpec& s);

config::ExperimentConfig trial_config(const config::ExperimentConfig& base, const TrialKey& key);

struct BoundRecord {
  std::string trial;
  std::size_t step = 0;
  /// Against the generator's exact joint when the data is synthetic.
  std::optional<info::BoundReport> exact;
  /// Against discretized batch latents.
  info::BoundReport empirical;
};

void to_json(nlohmann::json& j, const BoundRecord& r);

struct TrialOutcome {
  eval::TrialReport report;
  std::vector<BoundRecord> bounds;
  std::vector<train::LogRecord> log;
  model::ModelBundle bundle;
};

/// Trains, selects and evaluates one cell. Errors are caught and reported
/// with status "failed"; a diverged run keeps status "diverged".
/// `synthetic` enables exact-mode bound checks.
TrialOutcome run_trial(const data::Dataset& ds, const config::ExperimentConfig& base,
                       const TrialKey& key, bool monitor_bound, bool record_wall_time,
                       const data::SynthConfig* synthetic = nullptr);

/// The on-checkpoint bound check used during CLINIC trials with binary Y
/// and S. Returns nullopt when monitoring does not apply.
std::optional<BoundRecord> monitor_bound(const train::CheckpointEvent& ev,
                                         const TrialKey& key,
                                         const data::SynthConfig* synthetic);

struct TimingRow {
  std::string method;
  std::size_t trials = 0;
  double mean_step_seconds = 0.0;
  std::size_t param_count = 0;
  std::size_t params_extra = 0;
};

std::vector<TimingRow> timing_report(const std::vector<eval::TrialReport>& reports);
void write_timing_csv(std::ostream& os, const std::vector<TimingRow>& rows);

struct SweepResult {
  /// Every grid cell in grid order, including failures.
  std::vector<eval::TrialReport> reports;
  std::vector<eval::ParetoRow> pareto;
  std::vector<BoundRecord> bounds;
  std::size_t resumed = 0;
  std::size_t failures = 0;
};

/// Runs every cell not already completed under output_dir and writes
/// trials.csv, failures.csv, pareto.csv, bound_log.jsonl, timing.csv and
/// manifest.json there.
SweepResult run_sweep(const SweepSpec& spec);

}  // namespace clinic::sweep
