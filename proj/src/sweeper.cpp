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

#include "clinic/sweeper.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "clinic/errors.hpp"

namespace clinic::sweep {

void to_json(nlohmann::json& j, const SweepSpec& s) {
  j = {{"experiment", s.experiment},
       {"methods", s.methods},
       {"strategies", s.strategies},
       {"lambdas", s.lambdas},
       {"taus_p", s.taus_p},
       {"taus_n", s.taus_n},
       {"batch_sizes", s.batch_sizes},
       {"seeds", s.seeds},
       {"output_dir", s.output_dir},
       {"threads", s.threads},
       {"monitor_bound", s.monitor_bound},
       {"record_wall_time", s.record_wall_time}};
}

void from_json(const nlohmann::json& j, SweepSpec& s) {
  static const std::set<std::string> known = {
      "experiment", "methods", "strategies", "lambdas", "taus_p", "taus_n", "batch_sizes",
      "seeds", "output_dir", "threads", "monitor_bound", "record_wall_time"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown sweep key '" + it.key() + "'");
  }
  SweepSpec d;
  s.experiment = j.value("experiment", d.experiment);
  s.methods = j.value("methods", d.methods);
  s.strategies = j.value("strategies", d.strategies);
  s.lambdas = j.value("lambdas", d.lambdas);
  s.taus_p = j.value("taus_p", d.taus_p);
  s.taus_n = j.value("taus_n", d.taus_n);
  s.batch_sizes = j.value("batch_sizes", d.batch_sizes);
  s.seeds = j.value("seeds", d.seeds);
  s.output_dir = j.value("output_dir", d.output_dir);
  s.threads = j.value("threads", d.threads);
  s.monitor_bound = j.value("monitor_bound", d.monitor_bound);
  s.record_wall_time = j.value("record_wall_time", d.record_wall_time);
}

void validate(const SweepSpec& s) {
  if (s.methods.empty() || s.lambdas.empty() || s.taus_p.empty() || s.taus_n.empty() ||
      s.batch_sizes.empty() || s.seeds.empty()) {
    throw ConfigError("sweep grid is empty");
  }
  for (const auto& m : s.methods) {
    const auto method = train::method_from_string(m);
    if (method == train::Method::kCLINIC && s.strategies.empty()) {
      throw ConfigError("CLINIC sweeps need at least one strategy");
    }
  }
  for (const auto& st : s.strategies) losses::strategy_from_string(st);
  for (double l : s.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("sweep lambdas must be >= 0");
  }
  for (double t : s.taus_p) {
    if (!(t > 0.0)) throw ConfigError("sweep temperatures must be > 0");
  }
  for (double t : s.taus_n) {
    if (!(t > 0.0)) throw ConfigError("sweep temperatures must be > 0");
  }
  for (auto b : s.batch_sizes) {
    if (b < 2) throw ConfigError("sweep batch sizes must be >= 2");
  }
}

std::string TrialKey::id() const {
  return fmt::format("{}-{}-l{}-tp{}-tn{}-b{}-s{}", method, strategy, lambda, tau_p, tau_n,
                     batch_size, seed);
}

std::vector<TrialKey> expand_grid(const SweepSpec& s) {
  validate(s);
  std::vector<TrialKey> out;
  auto push = [&](TrialKey k) {
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(std::move(k));
  };
  for (const auto& m : s.methods) {
    const auto method = train::method_from_string(m);
    for (double lambda : s.lambdas) {
      for (const auto& strategy : s.strategies) {
        for (double tp : s.taus_p) {
          for (double tn : s.taus_n) {
            for (auto b : s.batch_sizes) {
              for (auto seed : s.seeds) {
                TrialKey k{m, strategy, lambda, tp, tn, b, seed};
                if (method == train::Method::kCE || lambda == 0.0) {
                  k = {"CE", "none", 0.0, 0.0, 0.0, b, seed};
                } else if (method == train::Method::kADV) {
                  k.strategy = "none";
                  k.tau_p = k.tau_n = 0.0;
                }
                push(std::move(k));
              }
            }
          }
        }
      }
    }
  }
  return out;
}

config::ExperimentConfig trial_config(const config::ExperimentConfig& base, const TrialKey& key) {
  config::ExperimentConfig c = base;
  c.train.method = train::method_from_string(key.method);
  c.train.lambda = key.lambda;
  if (key.strategy != "none") c.train.reg.strategy = losses::strategy_from_string(key.strategy);
  if (key.tau_p > 0.0) c.train.reg.tau_p = key.tau_p;
  if (key.tau_n > 0.0) c.train.reg.tau_n = key.tau_n;
  c.train.batch_size = key.batch_size;
  c.train.seed = key.seed;
  return c;
}

void to_json(nlohmann::json& j, const BoundRecord& r) {
  j = {{"trial", r.trial},
       {"step", r.step},
       {"exact", r.exact ? nlohmann::json(*r.exact) : nlohmann::json(nullptr)},
       {"empirical", r.empirical}};
}

namespace {

bool binary_and_complete(std::span<const int> v) {
  bool seen[2] = {false, false};
  for (int x : v) {
    if (x != 0 && x != 1) return false;
    seen[x] = true;
  }
  return seen[0] && seen[1];
}

}  // namespace

std::optional<BoundRecord> monitor_bound(const train::CheckpointEvent& ev, const TrialKey& key,
                                         const data::SynthConfig* synthetic) {
  if (key.method != "CLINIC" || key.lambda == 0.0) return std::nullopt;
  if (!ev.batch || !ev.result || ev.result->skipped) return std::nullopt;
  const auto& b = *ev.batch;
  if (!binary_and_complete(b.y) || !binary_and_complete(b.s)) return std::nullopt;
  BoundRecord rec;
  rec.trial = key.id();
  rec.step = ev.step;
  rec.empirical = info::theorem1_check(ev.result->latents, b.y, b.s, ev.result->reg);
  if (synthetic) {
    rec.exact = info::theorem1_check(b.y, b.s, ev.result->reg, data::component_joint(*synthetic));
  }
  return rec;
}

TrialOutcome run_trial(const data::Dataset& ds, const config::ExperimentConfig& base,
                       const TrialKey& key, bool monitor, bool record_wall_time,
                       const data::SynthConfig* synthetic) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialOutcome out;
  auto& r = out.report;
  r.method = key.method;
  r.strategy = key.strategy;
  r.lambda = key.lambda;
  r.tau_p = key.tau_p;
  r.tau_n = key.tau_n;
  r.batch_size = key.batch_size;
  r.seed = key.seed;
  try {
    const auto cfg = trial_config(base, key);
    train::FitHooks hooks;
    if (monitor) {
      hooks.on_checkpoint = [&](const train::CheckpointEvent& ev) {
        try {
          if (auto rec = monitor_bound(ev, key, synthetic)) out.bounds.push_back(std::move(*rec));
        } catch (const Error& e) {
          spdlog::debug("{}: bound check skipped at step {}: {}", key.id(), ev.step, e.what());
        }
      };
    }
    const auto fit = train::fit(ds, cfg.model, cfg.train, hooks);
    const auto& chosen = fit.selected();
    r = eval::evaluate_checkpoint(ds, chosen.bundle, cfg.eval, key.seed, r);
    r.status = fit.diverged ? "diverged" : "ok";
    r.message = fit.divergence_message;
    r.checkpoint_step = chosen.step;
    r.mean_step_seconds = fit.mean_step_seconds;
    r.skipped_batches = fit.skipped_batches;
    out.log = fit.log;
    out.bundle = chosen.bundle;
  } catch (const std::exception& e) {
    r.status = "failed";
    r.message = e.what();
    spdlog::error("trial {} failed: {}", key.id(), e.what());
  }
  r.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.wall_seconds = record_wall_time ? r.elapsed_seconds : 0.0;
  return out;
}

std::vector<TimingRow> timing_report(const std::vector<eval::TrialReport>& reports) {
  std::vector<TimingRow> rows;
  for (const auto& r : reports) {
    if (r.status != "ok") continue;
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const TimingRow& t) { return t.method == r.method; });
    if (it == rows.end()) {
      rows.push_back({r.method, 0, 0.0, r.param_count, r.params_extra});
      it = rows.end() - 1;
    }
    it->mean_step_seconds += r.mean_step_seconds;
    ++it->trials;
  }
  for (auto& t : rows) t.mean_step_seconds /= static_cast<double>(t.trials);
  return rows;
}

void write_timing_csv(std::ostream& os, const std::vector<TimingRow>& rows) {
  os << "method,trials,mean_step_seconds,param_count,params_extra\n";
  for (const auto& t : rows) {
    fmt::print(os, "{},{},{},{},{}\n", t.method, t.trials, t.mean_step_seconds, t.param_count,
               t.params_extra);
  }
}

namespace {

namespace fs = std::filesystem;

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<eval::TrialReport> load_completed(const fs::path& dir) {
  const fs::path p = dir / "report.json";
  if (!fs::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(read_file(p)).get<eval::TrialReport>();
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable {}: {}", p.string(), e.what());
    return std::nullopt;
  }
}

void persist(const fs::path& dir, const TrialOutcome& t, const nlohmann::json& cfg) {
  fs::create_directories(dir);
  std::string bounds;
  for (const auto& b : t.bounds) bounds += nlohmann::json(b).dump() + "\n";
  write_atomic(dir / "bound.jsonl", bounds);
  std::string log;
  for (const auto& l : t.log) log += nlohmann::json(l).dump() + "\n";
  write_atomic(dir / "train_log.jsonl", log);
  if (t.report.status != "failed") {
    model::save_checkpoint(t.bundle, dir / "checkpoint.json",
                           {{"trial", dir.filename().string()}, {"config", cfg}});
  }
  write_atomic(dir / "report.json", nlohmann::json(t.report).dump(2) + "\n");
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec) {
  const auto keys = expand_grid(spec);
  nlohmann::json exp = config::default_json();
  config::merge_checked(exp, spec.experiment);
  const auto base = config::parse(exp);
  const auto ds = config::load_dataset(base);
  const data::SynthConfig* synthetic = base.data_csv.empty() ? &base.data : nullptr;

  const fs::path out_dir = spec.output_dir;
  fs::create_directories(out_dir / "trials");

  SweepResult result;
  result.reports.resize(keys.size());
  std::vector<bool> done(keys.size(), false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (auto r = load_completed(out_dir / "trials" / keys[i].id())) {
      result.reports[i] = std::move(*r);
      done[i] = true;
      ++result.resumed;
    }
  }
  spdlog::info("sweep: {} cells, {} already complete", keys.size(), result.resumed);

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      if (done[i]) continue;
      const auto& key = keys[i];
      spdlog::info("trial {} ({}/{})", key.id(), i + 1, keys.size());
      auto outcome = run_trial(ds, base, key, spec.monitor_bound, spec.record_wall_time, synthetic);
      persist(out_dir / "trials" / key.id(), outcome,
              nlohmann::json(config::ExperimentConfig(trial_config(base, key))));
      std::lock_guard lock(mu);
      result.reports[i] = std::move(outcome.report);
      for (auto& b : outcome.bounds) result.bounds.push_back(std::move(b));
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.threads, keys.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ostringstream trials, failures, bound_log;
  eval::write_trial_csv_header(trials);
  eval::write_trial_csv_header(failures);
  std::vector<eval::TrialReport> ok;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& r = result.reports[i];
    if (r.status == "ok") {
      eval::write_trial_csv_row(trials, r);
      ok.push_back(r);
    } else {
      eval::write_trial_csv_row(failures, r);
      ++result.failures;
    }
    bound_log << read_file(out_dir / "trials" / keys[i].id() / "bound.jsonl");
  }
  result.pareto = eval::pareto_aggregate(ok);
  std::ostringstream pareto, timing;
  eval::write_pareto_csv(pareto, result.pareto);
  write_timing_csv(timing, timing_report(result.reports));

  write_atomic(out_dir / "trials.csv", trials.str());
  write_atomic(out_dir / "failures.csv", failures.str());
  write_atomic(out_dir / "pareto.csv", pareto.str());
  write_atomic(out_dir / "bound_log.jsonl", bound_log.str());
  write_atomic(out_dir / "timing.csv", timing.str());
  nlohmann::json spec_json = spec;
  write_atomic(out_dir / "manifest.json",
               config::manifest(exp, base.data.seed,
                                {{"sweep", spec_json}, {"cells", keys.size()},
                                 {"failures", result.failures}})
                       .dump(2) +
                   "\n");
  spdlog::info("sweep finished: {} ok, {} failed", ok.size(), result.failures);
  return result;
}

}  // namespace clinic::sweep
