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

#include "clinic/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "clinic/errors.hpp"

namespace clinic::train {

std::string to_string(Method m) {
  switch (m) {
    case Method::kCE: return "CE";
    case Method::kCLINIC: return "CLINIC";
    case Method::kADV: return "ADV";
  }
  return "CE";
}

Method method_from_string(const std::string& name) {
  if (name == "CE") return Method::kCE;
  if (name == "CLINIC") return Method::kCLINIC;
  if (name == "ADV") return Method::kADV;
  throw ConfigError("unknown method '" + name + "' (expected CE, CLINIC or ADV)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", to_string(c.method)},
       {"lambda", c.lambda},
       {"regularizer", c.reg},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"warmup_steps", c.warmup_steps},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"max_steps", c.max_steps},
       {"eval_every", c.eval_every},
       {"log_every", c.log_every},
       {"unroll", c.unroll},
       {"seed", c.seed},
       {"max_grad_norm", c.max_grad_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.method = method_from_string(j.value("method", to_string(d.method)));
  c.lambda = j.value("lambda", d.lambda);
  c.reg = j.value("regularizer", d.reg);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.log_every = j.value("log_every", d.log_every);
  c.unroll = j.value("unroll", d.unroll);
  c.seed = j.value("seed", d.seed);
  c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
}

void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda must be >= 0");
  if (c.max_steps == 0) throw ConfigError("max_steps must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(c.eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (c.method == Method::kADV && c.unroll == 0 && c.lambda > 0.0) {
    throw ConfigError("ADV needs unroll >= 1");
  }
  losses::validate(c.reg);
}

Method effective_method(const TrainConfig& c) {
  return c.lambda == 0.0 ? Method::kCE : c.method;
}

std::size_t effective_eval_every(const TrainConfig& c) {
  if (c.eval_every > 0) return c.eval_every;
  return std::max<std::size_t>(1, c.max_steps / 6);
}

AdamWConfig adamw_config(const TrainConfig& c) {
  return {c.lr, c.warmup_steps, c.weight_decay, c.beta1, c.beta2, c.eps};
}

double warmup_lr(const AdamWConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0) return cfg.lr;
  return cfg.lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
}

void adamw_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads,
                AdamWState& state, const AdamWConfig& cfg, std::size_t step) {
  if (params.size() != grads.size()) {
    throw ShapeError("adamw: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (step == 0) throw ConfigError("adamw: step index is 1-based");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw: optimizer state size mismatch");

  const double lr = warmup_lr(cfg, step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Tensor& p = *params[k];
    const ad::Tensor& g = grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
      throw ShapeError("adamw: parameter " + p.shape_string() + " vs gradient " +
                       g.shape_string());
    }
    ad::Tensor& m = state.m[k];
    ad::Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= lr * cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  state.steps = step;
}

double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.values()) v *= f;
    }
  }
  return norm;
}

TrainState init_state(const model::EncoderSpec& spec, std::size_t num_classes,
                      std::size_t num_sensitive, const TrainConfig& cfg) {
  TrainState st;
  Rng init_rng(derive_seed(cfg.seed, "init"));
  st.bundle = model::make_bundle(spec, num_classes, num_sensitive,
                                 effective_method(cfg) == Method::kADV, init_rng);
  st.rng = Rng(derive_seed(cfg.seed, "train"));
  return st;
}

namespace {

std::vector<ad::Tensor> collect_grads(const ad::Graph& g, std::span<ad::Tensor* const> params) {
  std::vector<ad::Tensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(g.param_grad(*p));
  return out;
}

void apply_update(ad::Graph& g, ad::Var loss, std::span<ad::Tensor* const> params,
                  AdamWState& opt, const TrainConfig& cfg) {
  g.backward(loss);
  auto grads = collect_grads(g, params);
  if (cfg.max_grad_norm > 0.0) clip_grad_norm(grads, cfg.max_grad_norm);
  adamw_step(params, grads, opt, adamw_config(cfg), opt.steps + 1);
}

}  // namespace

StepResult train_step(TrainState& state, const data::Batch& batch, const TrainConfig& cfg,
                      int num_classes, int num_sensitive,
                      const BatchSource& adversary_batches) {
  const Method method = effective_method(cfg);
  auto& bundle = state.bundle;
  ++state.step;
  StepResult out;

  if (method == Method::kADV) {
    if (!bundle.adversary) throw ConfigError("ADV training requires adversary parameters");
    auto psi = model::parameters(*bundle.adversary);
    // ψ-only inner loop; θ enters as a constant latent matrix.
    for (std::size_t u = 0; u < cfg.unroll; ++u) {
      const data::Batch inner = adversary_batches ? adversary_batches() : batch;
      ad::Graph ga;
      ad::Var z = ga.constant(model::encode(bundle.encoder, inner.x));
      auto terms = losses::adv_regularizer(ga, z, inner.s, bundle.adversary);
      if (!std::isfinite(terms.adversary_ce.value()[0])) break;
      apply_update(ga, terms.adversary_ce, psi, state.adversary_opt, cfg);
      ++state.adversary_updates;
    }
  }

  ad::Graph g;
  model::ForwardMode mode{.training = true, .frozen = false, .rng = &state.rng};
  ad::Var z = model::encode(g, bundle.encoder, g.constant(batch.x), mode);
  ad::Var logits = model::classify(g, bundle.head, z);
  ad::Var ce = losses::cross_entropy(logits, batch.y);
  ad::Var loss = ce;
  out.ce = ce.value()[0];
  out.latents = z.value();

  if (method == Method::kCLINIC) {
    const auto pairs = losses::build_pair_sets(batch.y, batch.s, num_classes, num_sensitive,
                                               cfg.reg.strategy, state.rng);
    try {
      auto term = losses::clinic_regularizer(g, z, pairs, cfg.reg);
      out.reg = term.value.value()[0];
      out.active_anchors = term.active;
      loss = losses::combined_loss(ce, term.value, cfg.lambda);
    } catch (const NoUsablePairsError&) {
      ++state.skipped_batches;
      out.skipped = true;
      spdlog::debug("step {}: batch has no usable pairs, skipped", state.step);
      return out;
    }
  } else if (method == Method::kADV) {
    auto terms = losses::adv_regularizer(g, z, batch.s, bundle.adversary,
                                         /*freeze_adversary=*/true);
    out.reg = terms.encoder_term.value()[0];
    loss = losses::combined_loss(ce, terms.encoder_term, cfg.lambda);
  }
  out.weighted_reg = cfg.lambda * out.reg;
  out.total = loss.value()[0];
  out.lr = warmup_lr(adamw_config(cfg), state.main_opt.steps + 1);
  if (!std::isfinite(out.total)) return out;

  auto theta_phi = model::main_parameters(bundle);
  apply_update(g, loss, theta_phi, state.main_opt, cfg);
  ++state.main_updates;
  return out;
}

void to_json(nlohmann::json& j, const LogRecord& r) {
  j = {{"step", r.step}, {"ce", r.ce}, {"R", r.reg}, {"lr", r.lr},
       {"skipped_batches", r.skipped_batches}};
}

std::size_t select_checkpoint(std::span<const Checkpoint> checkpoints, double lambda) {
  if (checkpoints.empty()) throw Error("no checkpoints to select from");
  std::size_t best = checkpoints.size() - 1;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const double score = lambda > 0.0 ? checkpoints[i].running_reg : checkpoints[i].dev_ce;
    if (std::isfinite(score) && score < best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

namespace {

struct Window {
  double ce = 0.0, reg = 0.0, wreg = 0.0;
  std::size_t n = 0;

  void add(const StepResult& r) {
    ce += r.ce;
    reg += r.reg;
    wreg += r.weighted_reg;
    ++n;
  }
  double mean(double v) const {
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : v / static_cast<double>(n);
  }
};

double dev_cross_entropy(const data::Dataset& ds, const model::ModelBundle& b) {
  const auto& dev = ds.split(data::Split::kDev).empty() ? ds.split(data::Split::kTrain)
                                                         : ds.split(data::Split::kDev);
  const auto batch = data::gather(ds, dev);
  return losses::cross_entropy(model::classify(b.head, model::encode(b.encoder, batch.x)),
                               batch.y);
}

}  // namespace

FitResult fit(const data::Dataset& ds, const model::EncoderSpec& spec, const TrainConfig& cfg,
              const FitHooks& hooks) {
  validate(cfg);
  model::EncoderSpec enc = spec;
  enc.input_dim = ds.dim();
  const int n_classes = ds.num_classes();
  const int n_sensitive = ds.num_sensitive();
  TrainState state = init_state(enc, static_cast<std::size_t>(n_classes),
                                static_cast<std::size_t>(n_sensitive), cfg);
  const std::size_t eval_every = effective_eval_every(cfg);

  BatchSource adversary_batches = [&]() {
    return data::sample_batch(ds, data::Split::kTrain, cfg.batch_size, state.rng);
  };

  FitResult out;
  Window window;
  using clock = std::chrono::steady_clock;
  clock::duration busy{};

  auto make_checkpoint = [&](std::size_t step) {
    Checkpoint c;
    c.step = step;
    c.bundle = state.bundle;
    c.running_ce = window.mean(window.ce);
    c.running_reg = window.mean(window.reg);
    c.running_weighted_reg = window.mean(window.wreg);
    c.dev_ce = dev_cross_entropy(ds, state.bundle);
    return c;
  };

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = data::sample_batch(ds, data::Split::kTrain, cfg.batch_size, state.rng);
    const auto t0 = clock::now();
    const StepResult r = train_step(state, batch, cfg, n_classes, n_sensitive, adversary_batches);
    busy += clock::now() - t0;
    out.steps_run = step;

    if (!r.skipped && !std::isfinite(r.total)) {
      out.diverged = true;
      out.divergence_message = "non-finite loss at step " + std::to_string(step);
      spdlog::warn("{}; keeping last finite parameters", out.divergence_message);
      out.checkpoints.push_back(make_checkpoint(step - 1));
      break;
    }
    if (!r.skipped) window.add(r);

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1)) {
      out.log.push_back({step, r.ce, r.reg, r.lr, state.skipped_batches});
    }
    if (step % eval_every == 0 || step == cfg.max_steps) {
      out.checkpoints.push_back(make_checkpoint(step));
      if (hooks.on_checkpoint) hooks.on_checkpoint({step, &batch, &r, &state});
      window = Window{};
    }
  }

  out.skipped_batches = state.skipped_batches;
  out.train_seconds = std::chrono::duration<double>(busy).count();
  out.mean_step_seconds =
      out.steps_run == 0 ? 0.0 : out.train_seconds / static_cast<double>(out.steps_run);
  out.best = out.diverged ? out.checkpoints.size() - 1
                          : select_checkpoint(out.checkpoints, cfg.lambda);
  return out;
}

}  // namespace clinic::train
