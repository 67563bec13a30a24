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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinic/autodiff.hpp"
#include "clinic/rng.hpp"

namespace clinic::model {

enum class Activation { kLeakyRelu, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Affine map x·W + b with W stored in×out.
struct Dense {
  ad::Tensor weight;
  ad::Tensor bias;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// Hidden layers apply the activation (and dropout while training); the last
/// layer is linear, optionally followed by row-wise L2 normalization.
struct Mlp {
  std::vector<Dense> layers;
  Activation activation = Activation::kLeakyRelu;
  double dropout = 0.0;
  bool normalize_output = false;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  friend bool operator==(const Mlp&, const Mlp&) = default;
};

using EncoderParams = Mlp;
using HeadParams = Dense;
using ProbeParams = Mlp;

struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {64};
  std::size_t latent_dim = 16;
  Activation activation = Activation::kLeakyRelu;
  double dropout = 0.2;
  /// Put latents on the unit sphere, so head, probes and the regularizer all
  /// see the same directions and no information can hide in the norm.
  bool normalize_output = true;
};

/// θ (encoder), φ (head) and, for the adversarial baseline only, ψ.
struct ModelBundle {
  EncoderParams encoder;
  HeadParams head;
  std::optional<ProbeParams> adversary;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Uniform(−a, a) with a = sqrt(6 / (fan_in + fan_out)); zero bias.
Dense make_dense(std::size_t in, std::size_t out, Rng& rng);
Mlp make_mlp(std::span<const std::size_t> widths, Activation act, double dropout, Rng& rng);
EncoderParams make_encoder(const EncoderSpec& spec, Rng& rng);
HeadParams make_head(std::size_t latent_dim, std::size_t num_classes, Rng& rng);
/// latent_dim → latent_dim → latent_dim → latent_dim → num_sensitive.
ProbeParams make_probe(std::size_t latent_dim, std::size_t num_sensitive, Rng& rng);
ModelBundle make_bundle(const EncoderSpec& spec, std::size_t num_classes,
                        std::size_t num_sensitive, bool with_adversary, Rng& rng);

struct ForwardMode {
  bool training = false;
  /// Bind parameters as constants so no gradient reaches them.
  bool frozen = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

ad::Var forward(ad::Graph& g, const Dense& layer, ad::Var x, bool frozen = false);
ad::Var forward(ad::Graph& g, const Mlp& net, ad::Var x, ForwardMode mode = {});

ad::Var encode(ad::Graph& g, const EncoderParams& enc, ad::Var x, ForwardMode mode = {});
ad::Var classify(ad::Graph& g, const HeadParams& head, ad::Var z, bool frozen = false);

/// Evaluation-mode conveniences (no dropout, no gradient).
ad::Tensor encode(const EncoderParams& enc, const ad::Tensor& x);
ad::Tensor classify(const HeadParams& head, const ad::Tensor& z);
ad::Tensor apply(const Mlp& net, const ad::Tensor& x);
ad::Tensor l2_normalize_rows(const ad::Tensor& z);
std::vector<int> argmax_rows(const ad::Tensor& logits);

std::size_t param_count(const Dense& d);
std::size_t param_count(const Mlp& m);
std::size_t param_count(const ModelBundle& b);

std::vector<ad::Tensor*> parameters(Mlp& m);
std::vector<ad::Tensor*> parameters(Dense& d);
/// Encoder then head parameters (θ, φ).
std::vector<ad::Tensor*> main_parameters(ModelBundle& b);

/// Order-sensitive checksum over every parameter value.
std::uint64_t checksum(const Mlp& m);

void to_json(nlohmann::json& j, const Dense& d);
void to_json(nlohmann::json& j, const Mlp& m);
void to_json(nlohmann::json& j, const ModelBundle& b);
Dense dense_from_json(const nlohmann::json& j);
Mlp mlp_from_json(const nlohmann::json& j);
ModelBundle bundle_from_json(const nlohmann::json& j);

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace clinic::model
