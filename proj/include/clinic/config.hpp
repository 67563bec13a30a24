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

// Experiment configuration: one JSON document covering data, model,
// training and evaluation, with dotted-key overrides and manifests.

#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "clinic/data.hpp"
#include "clinic/eval.hpp"
#include "clinic/model.hpp"
#include "clinic/train.hpp"

namespace clinic::model {

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

}  // namespace clinic::model

namespace clinic::config {

struct ExperimentConfig {
  data::SynthConfig data;
  /// When set, examples are read from this CSV instead of being generated.
  std::string data_csv;
  /// input_dim is taken from the dataset.
  model::EncoderSpec model;
  train::TrainConfig train;
  eval::EvalConfig eval;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Default configuration as JSON; the schema that files and overrides are
/// checked against.
nlohmann::json default_json();

/// Merges `patch` into `base`. Unknown keys and type changes throw
/// ConfigError naming the dotted key.
void merge_checked(nlohmann::json& base, const nlohmann::json& patch);

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults < file (if non-empty) < overrides, validated.
nlohmann::json resolve(const std::filesystem::path& file, std::span<const std::string> overrides);
ExperimentConfig parse(const nlohmann::json& j);

/// 16 hex digits of FNV-1a over the canonical dump.
std::string config_hash(const nlohmann::json& j);

/// {"tool", "version", "config_hash", "seed", "config"} plus `extra`.
nlohmann::json manifest(const nlohmann::json& effective, std::uint64_t seed,
                        const nlohmann::json& extra = nlohmann::json::object());

data::Dataset load_dataset(const ExperimentConfig& c);

}  // namespace clinic::config
