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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/data.hpp"
#include "clinic/losses.hpp"
#include "clinic/model.hpp"
#include "clinic/rng.hpp"

namespace clinic::train {

enum class Method { kCE, kCLINIC, kADV };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct TrainConfig {
  Method method = Method::kCLINIC;
  double lambda = 1.0;
  losses::RegularizerConfig reg;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t warmup_steps = 1000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t max_steps = 5000;
  /// 0 selects max_steps / 6.
  std::size_t eval_every = 0;
  std::size_t log_every = 50;
  std::size_t unroll = 5;
  std::uint64_t seed = 0;
  /// 0 disables clipping.
  double max_grad_norm = 0.0;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void validate(const TrainConfig& c);

/// λ = 0 runs are plain cross-entropy training whatever the requested method.
Method effective_method(const TrainConfig& c);
std::size_t effective_eval_every(const TrainConfig& c);

// ---- AdamW ----------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  std::size_t warmup_steps = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamWConfig adamw_config(const TrainConfig& c);

struct AdamWState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::size_t steps = 0;
};

/// lr · min(1, step / warmup); `step` is 1-based.
double warmup_lr(const AdamWConfig& cfg, std::size_t step);

/// One decoupled-weight-decay Adam update at 1-based `step`:
///   p ← p − lr_t·wd·p;  m ← β1 m + (1−β1) g;  v ← β2 v + (1−β2) g²
///   p ← p − lr_t · m̂ / (√v̂ + ε)   with bias-corrected m̂, v̂.
void adamw_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads,
                AdamWState& state, const AdamWConfig& cfg, std::size_t step);

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm);

// ---- stepping -------------------------------------------------------------

struct TrainState {
  model::ModelBundle bundle;
  AdamWState main_opt;
  AdamWState adversary_opt;
  Rng rng;
  std::size_t step = 0;
  std::size_t main_updates = 0;
  std::size_t adversary_updates = 0;
  std::size_t skipped_batches = 0;
};

/// Fresh bundle and optimizer state for `cfg` on a dataset of the given shape.
TrainState init_state(const model::EncoderSpec& spec, std::size_t num_classes,
                      std::size_t num_sensitive, const TrainConfig& cfg);

struct StepResult {
  double ce = 0.0;
  double reg = 0.0;           // R for CLINIC, −CE_adv for ADV, 0 for CE
  double weighted_reg = 0.0;  // λ·reg
  double total = 0.0;
  double lr = 0.0;
  bool skipped = false;
  std::size_t active_anchors = 0;
  ad::Tensor latents;         // training-mode latents of the batch
};

using BatchSource = std::function<data::Batch()>;

/// CE/CLINIC: one joint (θ, φ) update on ce + λ·R.
/// ADV: `unroll` ψ-only updates on batches from `adversary_batches` with θ
/// frozen, then one (θ, φ) update on ce − λ·CE_adv with ψ frozen.
/// Non-finite losses are reported without touching the parameters.
StepResult train_step(TrainState& state, const data::Batch& batch, const TrainConfig& cfg,
                      int num_classes, int num_sensitive,
                      const BatchSource& adversary_batches = {});

// ---- fitting --------------------------------------------------------------

struct Checkpoint {
  std::size_t step = 0;
  model::ModelBundle bundle;
  double running_ce = 0.0;
  double running_reg = 0.0;
  double running_weighted_reg = 0.0;
  double dev_ce = 0.0;
};

struct LogRecord {
  std::size_t step = 0;
  double ce = 0.0;
  double reg = 0.0;
  double lr = 0.0;
  std::size_t skipped_batches = 0;
};

void to_json(nlohmann::json& j, const LogRecord& r);

struct CheckpointEvent {
  std::size_t step = 0;
  const data::Batch* batch = nullptr;
  const StepResult* result = nullptr;
  const TrainState* state = nullptr;
};

struct FitHooks {
  std::function<void(const CheckpointEvent&)> on_checkpoint;
};

struct FitResult {
  std::vector<Checkpoint> checkpoints;
  std::size_t best = 0;
  bool diverged = false;
  std::string divergence_message;
  std::vector<LogRecord> log;
  std::size_t steps_run = 0;
  std::size_t skipped_batches = 0;
  double train_seconds = 0.0;
  double mean_step_seconds = 0.0;

  const Checkpoint& selected() const { return checkpoints.at(best); }
};

/// Trains from scratch. Checkpoints every eval_every steps; the selected
/// checkpoint minimizes the running regularizer (λ > 0) or the dev
/// cross-entropy (λ = 0). A non-finite loss stops training and keeps the last
/// finite parameters as the final checkpoint.
FitResult fit(const data::Dataset& ds, const model::EncoderSpec& spec, const TrainConfig& cfg,
              const FitHooks& hooks = {});

/// Index of the checkpoint the selection rule picks.
std::size_t select_checkpoint(std::span<const Checkpoint> checkpoints, double lambda);

}  // namespace clinic::train
