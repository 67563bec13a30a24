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

#include "clinic/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "clinic/errors.hpp"

namespace clinic::model {

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "leaky_relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> init(-a, a);
  Dense d{ad::Tensor(in, out), ad::Tensor(1, out)};
  for (auto& w : d.weight.values()) w = init(rng);
  return d;
}

Mlp make_mlp(std::span<const std::size_t> widths, Activation act, double dropout, Rng& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  Mlp m;
  m.activation = act;
  m.dropout = dropout;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0) throw ConfigError("layer width must be positive");
    m.layers.push_back(make_dense(widths[i], widths[i + 1], rng));
  }
  return m;
}

EncoderParams make_encoder(const EncoderSpec& spec, Rng& rng) {
  std::vector<std::size_t> widths{spec.input_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.latent_dim);
  Mlp m = make_mlp(widths, spec.activation, spec.dropout, rng);
  m.normalize_output = spec.normalize_output;
  return m;
}

HeadParams make_head(std::size_t latent_dim, std::size_t num_classes, Rng& rng) {
  return make_dense(latent_dim, num_classes, rng);
}

ProbeParams make_probe(std::size_t latent_dim, std::size_t num_sensitive, Rng& rng) {
  const std::size_t widths[] = {latent_dim, latent_dim, latent_dim, latent_dim, num_sensitive};
  return make_mlp(widths, Activation::kLeakyRelu, 0.0, rng);
}

ModelBundle make_bundle(const EncoderSpec& spec, std::size_t num_classes,
                        std::size_t num_sensitive, bool with_adversary, Rng& rng) {
  ModelBundle b;
  b.encoder = make_encoder(spec, rng);
  b.head = make_head(spec.latent_dim, num_classes, rng);
  if (with_adversary) b.adversary = make_probe(spec.latent_dim, num_sensitive, rng);
  return b;
}

namespace {

ad::Var bind(ad::Graph& g, const ad::Tensor& t, bool frozen) {
  return frozen ? g.constant(t) : g.param(t);
}

ad::Var activate(Activation act, ad::Var x) {
  return act == Activation::kTanh ? ad::tanh(x) : ad::leaky_relu(x);
}

ad::Tensor activate(Activation act, ad::Tensor x) {
  for (auto& v : x.values()) {
    v = act == Activation::kTanh ? std::tanh(v) : (v > 0.0 ? v : 0.01 * v);
  }
  return x;
}

ad::Tensor affine(const Dense& layer, const ad::Tensor& x) {
  ad::Tensor out = ad::matmul(x, layer.weight);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += layer.bias[j];
  }
  return out;
}

}  // namespace

ad::Var forward(ad::Graph& g, const Dense& layer, ad::Var x, bool frozen) {
  if (x.value().cols() != layer.in_dim()) {
    throw ShapeError("dense layer expects " + std::to_string(layer.in_dim()) +
                     " input columns, got " + x.value().shape_string());
  }
  return ad::add_row(ad::matmul(x, bind(g, layer.weight, frozen)), bind(g, layer.bias, frozen));
}

ad::Var forward(ad::Graph& g, const Mlp& net, ad::Var x, ForwardMode mode) {
  const bool use_dropout = mode.training && net.dropout > 0.0;
  if (use_dropout && mode.rng == nullptr) throw ConfigError("dropout requires an rng");
  ad::Var h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    h = forward(g, net.layers[l], h, mode.frozen);
    if (l + 1 == net.layers.size()) {
      if (net.normalize_output) h = ad::l2_normalize_rows(h);
      break;
    }
    h = activate(net.activation, h);
    if (use_dropout) {
      const ad::Tensor& hv = h.value();
      ad::Tensor mask(hv.rows(), hv.cols());
      std::bernoulli_distribution keep(1.0 - net.dropout);
      const double inv = 1.0 / (1.0 - net.dropout);
      for (auto& m : mask.values()) m = keep(*mode.rng) ? inv : 0.0;
      h = ad::mul(h, g.constant(std::move(mask)));
    }
  }
  return h;
}

ad::Var encode(ad::Graph& g, const EncoderParams& enc, ad::Var x, ForwardMode mode) {
  return forward(g, enc, x, mode);
}

ad::Var classify(ad::Graph& g, const HeadParams& head, ad::Var z, bool frozen) {
  return forward(g, head, z, frozen);
}

ad::Tensor apply(const Mlp& net, const ad::Tensor& x) {
  if (x.cols() != net.in_dim()) {
    throw ShapeError("network expects " + std::to_string(net.in_dim()) +
                     " input columns, got " + x.shape_string());
  }
  ad::Tensor h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    h = affine(net.layers[l], h);
    if (l + 1 < net.layers.size()) h = activate(net.activation, std::move(h));
  }
  return net.normalize_output ? l2_normalize_rows(h) : h;
}

ad::Tensor encode(const EncoderParams& enc, const ad::Tensor& x) { return apply(enc, x); }

ad::Tensor classify(const HeadParams& head, const ad::Tensor& z) {
  if (z.cols() != head.in_dim()) {
    throw ShapeError("head expects " + std::to_string(head.in_dim()) + " latent columns, got " +
                     z.shape_string());
  }
  return affine(head, z);
}

ad::Tensor l2_normalize_rows(const ad::Tensor& z) {
  ad::Tensor out = z;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (double v : z.row_span(i)) s += v * v;
    if (s == 0.0) throw ShapeError("l2_normalize_rows: row " + std::to_string(i) + " is zero");
    const double n = std::sqrt(s);
    for (double& v : out.row_span(i)) v /= n;
  }
  return out;
}

std::vector<int> argmax_rows(const ad::Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::size_t param_count(const Dense& d) { return d.weight.size() + d.bias.size(); }

std::size_t param_count(const Mlp& m) {
  std::size_t n = 0;
  for (const auto& l : m.layers) n += param_count(l);
  return n;
}

std::size_t param_count(const ModelBundle& b) {
  return param_count(b.encoder) + param_count(b.head) +
         (b.adversary ? param_count(*b.adversary) : 0);
}

std::vector<ad::Tensor*> parameters(Dense& d) { return {&d.weight, &d.bias}; }

std::vector<ad::Tensor*> parameters(Mlp& m) {
  std::vector<ad::Tensor*> out;
  for (auto& l : m.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<ad::Tensor*> main_parameters(ModelBundle& b) {
  auto out = parameters(b.encoder);
  for (auto* p : parameters(b.head)) out.push_back(p);
  return out;
}

std::uint64_t checksum(const Mlp& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : m.layers) {
    for (const auto* t : {&l.weight, &l.bias}) {
      for (double v : t->values()) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
    }
  }
  return h;
}

void to_json(nlohmann::json& j, const Dense& d) {
  j = {{"in", d.in_dim()}, {"out", d.out_dim()}, {"weight", d.weight.values()},
       {"bias", d.bias.values()}};
}

void to_json(nlohmann::json& j, const Mlp& m) {
  j = {{"activation", to_string(m.activation)},
       {"dropout", m.dropout},
       {"normalize_output", m.normalize_output},
       {"layers", m.layers}};
}

void to_json(nlohmann::json& j, const ModelBundle& b) {
  j = {{"format", "clinic-model"},
       {"version", 1},
       {"encoder", b.encoder},
       {"head", b.head},
       {"adversary", b.adversary ? nlohmann::json(*b.adversary) : nlohmann::json(nullptr)}};
}

Dense dense_from_json(const nlohmann::json& j) {
  const auto in = j.at("in").get<std::size_t>();
  const auto out = j.at("out").get<std::size_t>();
  return Dense{ad::Tensor(in, out, j.at("weight").get<std::vector<double>>()),
               ad::Tensor(1, out, j.at("bias").get<std::vector<double>>())};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp m;
  m.activation = activation_from_string(j.at("activation").get<std::string>());
  m.dropout = j.at("dropout").get<double>();
  m.normalize_output = j.value("normalize_output", false);
  for (const auto& l : j.at("layers")) m.layers.push_back(dense_from_json(l));
  if (m.layers.empty()) throw ConfigError("network has no layers");
  for (std::size_t i = 1; i < m.layers.size(); ++i) {
    if (m.layers[i].in_dim() != m.layers[i - 1].out_dim()) {
      throw ShapeError("network layer " + std::to_string(i) + " does not chain");
    }
  }
  return m;
}

ModelBundle bundle_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "clinic-model") {
      throw ConfigError("not a clinic model checkpoint");
    }
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported checkpoint version");
    ModelBundle b;
    b.encoder = mlp_from_json(j.at("encoder"));
    b.head = dense_from_json(j.at("head"));
    if (!j.at("adversary").is_null()) b.adversary = mlp_from_json(j.at("adversary"));
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  nlohmann::json j = b;
  j["metadata"] = metadata;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  return bundle_from_json(j);
}

}  // namespace clinic::model
