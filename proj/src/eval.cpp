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

#include "clinic/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "clinic/errors.hpp"
#include "clinic/infotheory.hpp"
#include "clinic/losses.hpp"
#include "clinic/rng.hpp"
#include "clinic/train.hpp"

namespace clinic::eval {

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = {{"max_steps", c.max_steps},       {"batch_size", c.batch_size},
       {"lr", c.lr},                     {"warmup_steps", c.warmup_steps},
       {"weight_decay", c.weight_decay}, {"eval_every", c.eval_every},
       {"patience", c.patience},         {"balanced", c.balanced}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.max_steps = j.value("max_steps", d.max_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.patience = j.value("patience", d.patience);
  c.balanced = j.value("balanced", d.balanced);
}

std::vector<double> balanced_cell_weights(std::span<const int> y, std::span<const int> s) {
  if (!y.empty() && y.size() != s.size()) throw ShapeError("cell weights: y and s differ in length");
  std::map<std::pair<int, int>, std::size_t> counts;
  auto cell = [&](std::size_t i) { return std::pair{y.empty() ? 0 : y[i], s[i]}; };
  for (std::size_t i = 0; i < s.size(); ++i) ++counts[cell(i)];
  std::vector<double> w(s.size());
  const double cells = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    w[i] = 1.0 / (cells * static_cast<double>(counts[cell(i)]));
  }
  return w;
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (preds.empty()) throw DataError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double weighted_accuracy(std::span<const int> preds, std::span<const int> labels,
                         std::span<const double> weights) {
  if (preds.size() != labels.size() || preds.size() != weights.size()) {
    throw ShapeError("weighted accuracy: length mismatch");
  }
  double hit = 0.0, total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += weights[i];
    if (preds[i] == labels[i]) hit += weights[i];
  }
  if (!(total > 0.0)) throw DataError("weighted accuracy needs positive total weight");
  return hit / total;
}

double probe_accuracy(const model::ProbeParams& probe, const ProbeSplit& split, bool balanced) {
  const auto preds = model::argmax_rows(model::apply(probe, split.z));
  if (!balanced) return accuracy(preds, split.s);
  const auto w = balanced_cell_weights(split.y, split.s);
  return weighted_accuracy(preds, split.s, w);
}

ProbeResult train_probe(const ProbeSplit& train, const ProbeSplit& dev, int num_sensitive,
                        const ProbeConfig& cfg, std::uint64_t seed) {
  const std::size_t n = train.z.rows();
  if (train.s.size() != n) throw ShapeError("probe: latents and labels differ in length");
  if (std::set<int>(train.s.begin(), train.s.end()).size() < 2) {
    throw DataError("probe training needs at least two sensitive groups");
  }
  if (cfg.batch_size == 0 || cfg.max_steps == 0) throw ConfigError("probe: empty schedule");

  Rng rng(seed);
  ProbeResult out;
  out.params = model::make_probe(train.z.cols(), static_cast<std::size_t>(num_sensitive), rng);
  const auto weights = cfg.balanced ? balanced_cell_weights(train.y, train.s)
                                    : std::vector<double>(n, 1.0);
  const ProbeSplit& held = dev.z.rows() > 0 ? dev : train;

  train::AdamWConfig opt_cfg{cfg.lr, cfg.warmup_steps, cfg.weight_decay, 0.9, 0.999, 1e-8};
  train::AdamWState opt;
  auto params = model::parameters(out.params);
  const std::size_t bsz = std::min(cfg.batch_size, n);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  double best = -1.0;
  model::ProbeParams best_params = out.params;
  std::size_t stale = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    for (std::size_t k = 0; k < bsz; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(perm[k], perm[pick(rng)]);
    }
    std::vector<std::size_t> rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(bsz));
    ad::Tensor zb(bsz, train.z.cols());
    std::vector<int> sb(bsz);
    std::vector<double> wb(bsz);
    for (std::size_t k = 0; k < bsz; ++k) {
      const auto src = train.z.row_span(rows[k]);
      std::copy(src.begin(), src.end(), zb.row_span(k).begin());
      sb[k] = train.s[rows[k]];
      wb[k] = weights[rows[k]];
    }
    ad::Graph g;
    ad::Var logits = model::forward(g, out.params, g.constant(zb));
    ad::Var loss = losses::weighted_cross_entropy(logits, sb, wb);
    g.backward(loss);
    std::vector<ad::Tensor> grads;
    for (auto* p : params) grads.push_back(g.param_grad(*p));
    train::adamw_step(params, grads, opt, opt_cfg, step);
    out.steps = step;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double acc = probe_accuracy(out.params, held, cfg.balanced);
      if (acc > best) {
        best = acc;
        best_params = out.params;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  out.params = std::move(best_params);
  out.dev_accuracy = best;
  return out;
}

double rms(std::span<const double> gaps) {
  if (gaps.empty()) return 0.0;
  double sq = 0.0;
  for (double g : gaps) sq += g * g;
  return std::sqrt(sq / static_cast<double>(gaps.size()));
}

GapResult gap_tpr(std::span<const int> preds, std::span<const int> y, std::span<const int> s,
                  int num_classes) {
  if (preds.size() != y.size() || y.size() != s.size()) throw ShapeError("gap: length mismatch");
  for (int v : s) {
    if (v != 0 && v != 1) throw ConfigError("GAP is defined for binary sensitive groups only");
  }
  const auto nc = static_cast<std::size_t>(num_classes);
  std::vector<std::array<double, 2>> hits(nc, {0.0, 0.0}), totals(nc, {0.0, 0.0});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= num_classes) throw DataError("gap: class id out of range");
    const auto c = static_cast<std::size_t>(y[i]);
    const auto g = static_cast<std::size_t>(s[i]);
    totals[c][g] += 1.0;
    if (preds[i] == y[i]) hits[c][g] += 1.0;
  }
  GapResult out;
  for (std::size_t c = 0; c < nc; ++c) {
    if (totals[c][0] == 0.0 || totals[c][1] == 0.0) {
      out.excluded_classes.push_back(static_cast<int>(c));
      continue;
    }
    out.per_class.push_back(hits[c][0] / totals[c][0] - hits[c][1] / totals[c][1]);
  }
  out.value = out.per_class.empty() ? std::numeric_limits<double>::quiet_NaN() : rms(out.per_class);
  return out;
}

// ---- reports ----------------------------------------------------------------

void to_json(nlohmann::json& j, const TrialReport& r) {
  j = {{"method", r.method},
       {"strategy", r.strategy},
       {"lambda", r.lambda},
       {"tau_p", r.tau_p},
       {"tau_n", r.tau_n},
       {"batch_size", r.batch_size},
       {"seed", r.seed},
       {"main_acc", r.main_acc},
       {"sensitive_acc", r.sensitive_acc},
       {"gap", r.gap ? nlohmann::json(*r.gap) : nlohmann::json(nullptr)},
       {"cond_mi", r.cond_mi},
       {"params_extra", r.params_extra},
       {"wall_seconds", r.wall_seconds},
       {"status", r.status},
       {"checkpoint_step", r.checkpoint_step},
       {"param_count", r.param_count},
       {"mean_step_seconds", r.mean_step_seconds},
       {"elapsed_seconds", r.elapsed_seconds},
       {"skipped_batches", r.skipped_batches},
       {"gap_excluded_classes", r.gap_excluded_classes},
       {"message", r.message}};
}

void from_json(const nlohmann::json& j, TrialReport& r) {
  r.method = j.at("method").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.lambda = j.at("lambda").get<double>();
  r.tau_p = j.value("tau_p", 0.0);
  r.tau_n = j.value("tau_n", 0.0);
  r.batch_size = j.value("batch_size", std::size_t{0});
  r.seed = j.at("seed").get<std::uint64_t>();
  r.main_acc = j.at("main_acc").get<double>();
  r.sensitive_acc = j.at("sensitive_acc").get<double>();
  if (j.contains("gap") && !j["gap"].is_null()) {
    r.gap = j["gap"].get<double>();
  } else {
    r.gap.reset();
  }
  r.cond_mi = j.value("cond_mi", 0.0);
  r.params_extra = j.value("params_extra", std::size_t{0});
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.status = j.value("status", std::string("ok"));
  r.checkpoint_step = j.value("checkpoint_step", std::size_t{0});
  r.param_count = j.value("param_count", std::size_t{0});
  r.mean_step_seconds = j.value("mean_step_seconds", 0.0);
  r.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  r.skipped_batches = j.value("skipped_batches", std::size_t{0});
  r.gap_excluded_classes = j.value("gap_excluded_classes", std::vector<int>{});
  r.message = j.value("message", std::string());
}

const std::vector<std::string>& trial_csv_columns() {
  static const std::vector<std::string> cols = {
      "method",        "strategy", "lambda",  "tau_p",        "tau_n",
      "batch_size",    "seed",     "main_acc", "sensitive_acc", "gap",
      "cond_mi",       "params_extra", "wall_seconds", "status"};
  return cols;
}

void write_trial_csv_header(std::ostream& os) {
  const auto& cols = trial_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

void write_trial_csv_row(std::ostream& os, const TrialReport& r) {
  fmt::print(os, "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.method, r.strategy, r.lambda,
             r.tau_p, r.tau_n, r.batch_size, r.seed, r.main_acc, r.sensitive_acc,
             r.gap ? fmt::format("{}", *r.gap) : std::string(), r.cond_mi, r.params_extra,
             r.wall_seconds, r.status);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& f, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(f, &used);
    if (used != f.size()) throw std::invalid_argument(f);
    return v;
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + f + "'", line);
  }
}

std::uint64_t parse_uint(const std::string& f, std::size_t line) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(f, &used);
    if (used != f.size() || f.front() == '-') throw std::invalid_argument(f);
    return v;
  } catch (const std::exception&) {
    throw DataError("expected a non-negative integer, found '" + f + "'", line);
  }
}

}  // namespace

std::vector<TrialReport> read_trials_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : trial_csv_columns()) {
    if (!col.count(name)) throw DataError("missing column \"" + name + "\"", 1);
  }
  std::vector<TrialReport> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) {
      throw DataError(fmt::format("expected {} fields, found {}", header.size(), f.size()), lineno);
    }
    auto get = [&](const char* name) -> const std::string& { return f[col.at(name)]; };
    TrialReport r;
    r.method = get("method");
    r.strategy = get("strategy");
    r.lambda = parse_double(get("lambda"), lineno);
    r.tau_p = parse_double(get("tau_p"), lineno);
    r.tau_n = parse_double(get("tau_n"), lineno);
    r.batch_size = parse_uint(get("batch_size"), lineno);
    r.seed = parse_uint(get("seed"), lineno);
    r.main_acc = parse_double(get("main_acc"), lineno);
    r.sensitive_acc = parse_double(get("sensitive_acc"), lineno);
    if (!get("gap").empty()) r.gap = parse_double(get("gap"), lineno);
    r.cond_mi = parse_double(get("cond_mi"), lineno);
    r.params_extra = parse_uint(get("params_extra"), lineno);
    r.wall_seconds = parse_double(get("wall_seconds"), lineno);
    r.status = get("status");
    out.push_back(std::move(r));
  }
  return out;
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"probe", c.probe}, {"bins_per_dim", c.bins_per_dim}, {"dims_used", c.dims_used}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  c.probe = j.value("probe", d.probe);
  c.bins_per_dim = j.value("bins_per_dim", d.bins_per_dim);
  c.dims_used = j.value("dims_used", d.dims_used);
}

namespace {

ProbeSplit latents_for(const data::Dataset& ds, const model::ModelBundle& b, data::Split which) {
  const auto batch = data::gather(ds, which);
  return {model::encode(b.encoder, batch.x), batch.s, batch.y};
}

}  // namespace

TrialReport evaluate_checkpoint(const data::Dataset& ds, const model::ModelBundle& bundle,
                                const EvalConfig& cfg, std::uint64_t trial_seed,
                                TrialReport base) {
  TrialReport r = std::move(base);
  const auto test = data::gather(ds, data::Split::kTest);
  if (test.size() == 0) throw DataError("test split is empty");
  const ad::Tensor z_test = model::encode(bundle.encoder, test.x);
  const auto preds = model::argmax_rows(model::classify(bundle.head, z_test));
  r.main_acc = accuracy(preds, test.y);

  const ProbeSplit train_split = latents_for(ds, bundle, data::Split::kTrain);
  const ProbeSplit dev_split = latents_for(ds, bundle, data::Split::kDev);
  const ProbeSplit test_split{z_test, test.s, test.y};
  const auto probe = train_probe(train_split, dev_split, ds.num_sensitive(), cfg.probe,
                                 derive_seed(trial_seed, "probe"));
  r.sensitive_acc = probe_accuracy(probe.params, test_split, cfg.probe.balanced);

  if (ds.num_sensitive() == 2) {
    const auto gap = gap_tpr(preds, test.y, test.s, ds.num_classes());
    r.gap = gap.value;
    r.gap_excluded_classes = gap.excluded_classes;
  } else {
    r.gap.reset();
  }

  const std::size_t dims = std::min(cfg.dims_used, z_test.cols());
  const auto zbin = info::discretize_latents(z_test, cfg.bins_per_dim, dims);
  std::size_t nbins = 1;
  for (std::size_t d = 0; d < dims; ++d) nbins *= cfg.bins_per_dim;
  const auto joint = info::empirical_joint(zbin, test.s, test.y, nbins,
                                           static_cast<std::size_t>(ds.num_sensitive()),
                                           static_cast<std::size_t>(ds.num_classes()));
  r.cond_mi = info::conditional_mi(joint);

  r.param_count = model::param_count(bundle);
  r.params_extra = bundle.adversary ? model::param_count(*bundle.adversary) : 0;
  return r;
}

// ---- aggregation --------------------------------------------------------------

namespace {

auto key_of(const TrialReport& r) {
  return std::tuple(r.method, r.strategy, r.lambda, r.tau_p, r.tau_n, r.batch_size, r.seed);
}

}  // namespace

std::vector<ParetoRow> pareto_aggregate(std::vector<TrialReport> reports) {
  std::set<decltype(key_of(reports.front()))> seen;
  for (const auto& r : reports) {
    if (!seen.insert(key_of(r)).second) {
      throw ConfigError(fmt::format("duplicate trial key ({}, {}, lambda={}, seed={})", r.method,
                                    r.strategy, r.lambda, r.seed));
    }
  }
  std::stable_sort(reports.begin(), reports.end(),
                   [](const TrialReport& a, const TrialReport& b) { return a.lambda < b.lambda; });
  std::vector<ParetoRow> rows;
  rows.reserve(reports.size());
  for (auto& r : reports) rows.push_back({std::move(r), false});
  for (auto& row : rows) {
    if (row.report.status != "ok") continue;
    bool dominated = false;
    for (const auto& other : rows) {
      if (&other == &row || other.report.status != "ok") continue;
      const auto& a = other.report;
      const auto& b = row.report;
      if (a.sensitive_acc <= b.sensitive_acc && a.main_acc >= b.main_acc &&
          (a.sensitive_acc < b.sensitive_acc || a.main_acc > b.main_acc)) {
        dominated = true;
        break;
      }
    }
    row.dominant = !dominated;
  }
  return rows;
}

void write_pareto_csv(std::ostream& os, std::span<const ParetoRow> rows) {
  std::ostringstream header;
  write_trial_csv_header(header);
  std::string h = header.str();
  h.pop_back();
  os << h << ",dominant\n";
  for (const auto& row : rows) {
    std::ostringstream line;
    write_trial_csv_row(line, row.report);
    std::string l = line.str();
    l.pop_back();
    os << l << ',' << (row.dominant ? 1 : 0) << '\n';
  }
}

std::vector<CurvePoint> accuracy_curves(std::span<const TrialReport> reports) {
  std::map<std::pair<std::string, double>, CurvePoint> acc;
  for (const auto& r : reports) {
    if (r.status != "ok") continue;
    const std::string series = r.method + "/" + r.strategy;
    auto& p = acc[{series, r.lambda}];
    p.series = series;
    p.lambda = r.lambda;
    p.main_acc += r.main_acc;
    p.sensitive_acc += r.sensitive_acc;
    ++p.trials;
  }
  std::vector<CurvePoint> out;
  for (auto& [key, p] : acc) {
    p.main_acc /= static_cast<double>(p.trials);
    p.sensitive_acc /= static_cast<double>(p.trials);
    out.push_back(p);
  }
  return out;
}

void write_curves_csv(std::ostream& os, std::span<const CurvePoint> points) {
  os << "series,metric,x,y\n";
  for (const auto& p : points) {
    fmt::print(os, "{},main_acc,{},{}\n", p.series, p.lambda, p.main_acc);
  }
  for (const auto& p : points) {
    fmt::print(os, "{},sensitive_acc,{},{}\n", p.series, p.lambda, p.sensitive_acc);
  }
}

}  // namespace clinic::eval
