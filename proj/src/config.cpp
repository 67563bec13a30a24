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

#include "clinic/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "clinic/errors.hpp"
#include "clinic/rng.hpp"

namespace clinic::model {

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = {{"hidden", s.hidden},
       {"latent_dim", s.latent_dim},
       {"activation", to_string(s.activation)},
       {"dropout", s.dropout},
       {"normalize_output", s.normalize_output}};
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  EncoderSpec d;
  s.hidden = j.value("hidden", d.hidden);
  s.latent_dim = j.value("latent_dim", d.latent_dim);
  s.activation = activation_from_string(j.value("activation", to_string(d.activation)));
  s.dropout = j.value("dropout", d.dropout);
  s.normalize_output = j.value("normalize_output", d.normalize_output);
}

}  // namespace clinic::model

namespace clinic::config {

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"data", c.data},
       {"data_csv", c.data_csv},
       {"model", c.model},
       {"train", c.train},
       {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.data = j.value("data", d.data);
  c.data_csv = j.value("data_csv", d.data_csv);
  c.model = j.value("model", d.model);
  c.train = j.value("train", d.train);
  c.eval = j.value("eval", d.eval);
}

nlohmann::json default_json() { return ExperimentConfig{}; }

namespace {

bool compatible(const nlohmann::json& old_v, const nlohmann::json& new_v) {
  if (old_v.is_number_float()) return new_v.is_number();
  if (old_v.is_number_unsigned() || old_v.is_number_integer()) {
    return new_v.is_number_unsigned() ||
           (new_v.is_number_integer() && old_v.is_number_integer() && new_v.get<long long>() >= 0);
  }
  return old_v.type() == new_v.type();
}

const char* type_name(const nlohmann::json& v) {
  if (v.is_number_unsigned()) return "non-negative integer";
  return v.type_name();
}

void merge_at(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + key + "' expects an object");
      merge_at(slot, *it, key);
    } else {
      if (!compatible(slot, *it)) {
        throw ConfigError(fmt::format("config key '{}' expects {}, got {}", key, type_name(slot),
                                      it->type_name()));
      }
      slot = *it;
    }
  }
}

}  // namespace

void merge_checked(nlohmann::json& base, const nlohmann::json& patch) {
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  merge_at(base, patch, "");
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  const nlohmann::json* node = &j;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[p];
  }

  nlohmann::json value;
  if (node->is_string()) {
    value = text;
  } else {
    value = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = text;
  }
  nlohmann::json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  merge_checked(j, patch);
}

ExperimentConfig parse(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  data::validate(c.data);
  train::validate(c.train);
  if (c.model.latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
  if (c.model.dropout < 0.0 || c.model.dropout >= 1.0) {
    throw ConfigError("model.dropout must lie in [0, 1)");
  }
  if (c.eval.bins_per_dim < 2) throw ConfigError("eval.bins_per_dim must be >= 2");
  return c;
}

nlohmann::json resolve(const std::filesystem::path& file, std::span<const std::string> overrides) {
  nlohmann::json j = default_json();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    nlohmann::json from_file;
    try {
      in >> from_file;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + file.string() + ": " + e.what());
    }
    merge_checked(j, from_file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  parse(j);
  return j;
}

std::string config_hash(const nlohmann::json& j) {
  return fmt::format("{:016x}", fnv1a(j.dump()));
}

nlohmann::json manifest(const nlohmann::json& effective, std::uint64_t seed,
                        const nlohmann::json& extra) {
  nlohmann::json m = {{"tool", "clinic"},
                      {"version", CLINIC_VERSION},
                      {"config_hash", config_hash(effective)},
                      {"seed", seed},
                      {"config", effective}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
  return m;
}

data::Dataset load_dataset(const ExperimentConfig& c) {
  if (c.data_csv.empty()) return data::generate(c.data);
  return data::load_csv(c.data_csv, c.data.train_fraction, c.data.dev_fraction,
                        derive_seed(c.data.seed, "split"));
}

}  // namespace clinic::config
