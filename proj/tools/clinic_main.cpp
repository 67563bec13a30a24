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

// clinic: data generation, training, probing, sweeps, MI and reports.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "clinic/config.hpp"
#include "clinic/data.hpp"
#include "clinic/errors.hpp"
#include "clinic/eval.hpp"
#include "clinic/infotheory.hpp"
#include "clinic/sweeper.hpp"
#include "clinic/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kDiverged = 3;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--set", o.overrides, "Override a config value, key=value (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Seed");
  cmd->add_option("--threads", o.threads, "Worker threads (sweep only)");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw clinic::Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw clinic::Error("cannot write " + path.string());
  out << text;
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw clinic::ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw clinic::ConfigError(path.string() + ": " + e.what());
  }
}

/// Effective experiment config; `seed_key` receives --seed.
json resolve(const CommonOptions& o, const char* seed_key) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back(fmt::format("{}={}", seed_key, *o.seed));
  return clinic::config::resolve(o.config, overrides);
}

int cmd_gen_data(const CommonOptions& o) {
  const json eff = resolve(o, "data.seed");
  const auto cfg = clinic::config::parse(eff);
  if (!cfg.data_csv.empty()) throw clinic::ConfigError("gen-data ignores data_csv; unset it");
  const auto ds = clinic::data::generate(cfg.data);
  fs::create_directories(o.out);
  clinic::data::write_csv(ds, fs::path(o.out) / "data.csv");
  const double iys = clinic::info::exact_mi(clinic::data::label_joint(cfg.data));
  write_json(fs::path(o.out) / "manifest.json",
             clinic::config::manifest(eff, cfg.data.seed,
                                      {{"rho", cfg.data.rho},
                                       {"mi_y_s_nats", iys},
                                       {"rows", ds.size()},
                                       {"file", "data.csv"}}));
  spdlog::info("wrote {} rows, analytic I(Y;S) = {} nats", ds.size(), iys);
  return kOk;
}

int cmd_train(const CommonOptions& o) {
  const json eff = resolve(o, "train.seed");
  const auto cfg = clinic::config::parse(eff);
  const auto ds = clinic::config::load_dataset(cfg);
  const fs::path out = o.out;
  fs::create_directories(out);

  const clinic::sweep::TrialKey key{
      clinic::train::to_string(clinic::train::effective_method(cfg.train)),
      clinic::train::effective_method(cfg.train) == clinic::train::Method::kCLINIC
          ? clinic::losses::to_string(cfg.train.reg.strategy)
          : "none",
      clinic::train::effective_method(cfg.train) == clinic::train::Method::kCE ? 0.0
                                                                                : cfg.train.lambda,
      clinic::train::effective_method(cfg.train) == clinic::train::Method::kCLINIC
          ? cfg.train.reg.tau_p
          : 0.0,
      clinic::train::effective_method(cfg.train) == clinic::train::Method::kCLINIC
          ? cfg.train.reg.tau_n
          : 0.0,
      cfg.train.batch_size,
      cfg.train.seed};
  const auto t = clinic::sweep::run_trial(ds, cfg, key, /*monitor_bound=*/true,
                                          /*record_wall_time=*/true,
                                          cfg.data_csv.empty() ? &cfg.data : nullptr);
  const auto manifest = clinic::config::manifest(eff, cfg.train.seed);
  write_json(out / "report.json", t.report);
  write_json(out / "manifest.json", manifest);
  std::string log;
  for (const auto& r : t.log) log += json(r).dump() + "\n";
  write_text(out / "train_log.jsonl", log);
  std::string bounds;
  for (const auto& b : t.bounds) bounds += json(b).dump() + "\n";
  write_text(out / "bound_log.jsonl", bounds);
  if (t.report.status == "failed") throw clinic::Error(t.report.message);
  clinic::model::save_checkpoint(t.bundle, out / "checkpoint.json", manifest);
  std::cout << json(t.report).dump(2) << '\n';
  if (t.report.status == "diverged") {
    spdlog::error("{}", t.report.message);
    return kDiverged;
  }
  return kOk;
}

int cmd_probe(const CommonOptions& o, const std::string& checkpoint) {
  const json eff = resolve(o, "train.seed");
  const auto cfg = clinic::config::parse(eff);
  const auto ds = clinic::config::load_dataset(cfg);
  const auto bundle = clinic::model::load_checkpoint(checkpoint);
  if (bundle.encoder.in_dim() != ds.dim()) {
    throw clinic::ConfigError(fmt::format("checkpoint expects {} features, data has {}",
                                          bundle.encoder.in_dim(), ds.dim()));
  }
  clinic::eval::TrialReport base;
  base.method = bundle.adversary ? "ADV" : "unknown";
  base.strategy = "none";
  base.seed = cfg.train.seed;
  const auto r = clinic::eval::evaluate_checkpoint(ds, bundle, cfg.eval, cfg.train.seed, base);
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / "probe_report.json", r);
  write_json(fs::path(o.out) / "manifest.json",
             clinic::config::manifest(eff, cfg.train.seed, {{"checkpoint", checkpoint}}));
  std::cout << json(r).dump(2) << '\n';
  return kOk;
}

int cmd_sweep(const CommonOptions& o) {
  clinic::sweep::SweepSpec spec;
  if (!o.config.empty()) spec = load_json(o.config).get<clinic::sweep::SweepSpec>();
  json exp = clinic::config::default_json();
  clinic::config::merge_checked(exp, spec.experiment);
  for (const auto& s : o.overrides) clinic::config::apply_override(exp, s);
  clinic::config::parse(exp);
  spec.experiment = exp;
  if (o.out != ".") spec.output_dir = o.out;
  if (o.seed) spec.seeds = {*o.seed};
  if (o.threads > 1) spec.threads = o.threads;
  const auto result = clinic::sweep::run_sweep(spec);
  std::cout << fmt::format("{} trials ({} resumed, {} failed) -> {}\n", result.reports.size(),
                           result.resumed, result.failures, spec.output_dir);
  return result.failures == 0 ? kOk : kRuntime;
}

int cmd_mi(const std::string& path) {
  const auto joint = clinic::info::joint_from_json(load_json(path));
  if (joint.rank() != 3) {
    throw clinic::ConfigError("mi expects a joint over three axes (Z, S, Y)");
  }
  const auto d = clinic::info::decompose(joint);
  std::cout << fmt::format("I(Z;S) = {:.15g}\n", d.mutual_information)
            << fmt::format("I(Z;S|Y) = {:.15g}\n", d.conditional)
            << fmt::format("I(Z;S;Y) = {:.15g}\n", d.interaction);
  return kOk;
}

int cmd_report(const CommonOptions& o, const std::string& trials_path) {
  const auto reports = clinic::eval::read_trials_csv(trials_path);
  const auto rows = clinic::eval::pareto_aggregate(reports);
  const auto curves = clinic::eval::accuracy_curves(reports);
  fs::create_directories(o.out);
  std::ostringstream pareto, curve_csv;
  clinic::eval::write_pareto_csv(pareto, rows);
  clinic::eval::write_curves_csv(curve_csv, curves);
  write_text(fs::path(o.out) / "pareto.csv", pareto.str());
  write_text(fs::path(o.out) / "curves.csv", curve_csv.str());
  const json input = {{"trials", trials_path}, {"rows", reports.size()}};
  write_json(fs::path(o.out) / "manifest.json",
             {{"tool", "clinic"},
              {"version", CLINIC_VERSION},
              {"config_hash", clinic::config::config_hash(input)},
              {"seed", nullptr},
              {"config", input},
              {"columns",
               {{"pareto.csv", "trial columns plus dominant (1 = not Pareto-dominated)"},
                {"curves.csv", "series,metric,x,y with x = lambda and y = mean accuracy"}}}});
  spdlog::info("{} trials, {} dominant", rows.size(),
               std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.dominant; }));
  return kOk;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("clinic");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("CLINIC_LOG");
  const std::string level = env ? env : "info";
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else {
    if (level != "info") spdlog::warn("CLINIC_LOG={} not recognized; using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Conditional contrastive disentanglement: data, training, probes and sweeps"};
  app.set_version_flag("--version", CLINIC_VERSION);
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, probe_o, sweep_o, report_o;
  std::string checkpoint, joint_path, trials_path;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, gen_o);
  auto* tr = app.add_subcommand("train", "Train one model and evaluate its selected checkpoint");
  add_common(tr, train_o);
  auto* pr = app.add_subcommand("probe", "Evaluate a saved checkpoint");
  add_common(pr, probe_o);
  pr->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  auto* sw = app.add_subcommand("sweep", "Run a grid sweep (--config is a sweep spec)");
  add_common(sw, sweep_o);
  auto* mi = app.add_subcommand("mi", "Decompose I(Z;S) for a joint over (Z, S, Y)");
  mi->add_option("joint", joint_path, "Joint JSON")->required();
  auto* rep = app.add_subcommand("report", "Pareto table and accuracy curves from trials.csv");
  add_common(rep, report_o);
  rep->add_option("trials", trials_path, "trials.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (tr->parsed()) return cmd_train(train_o);
    if (pr->parsed()) return cmd_probe(probe_o, checkpoint);
    if (sw->parsed()) return cmd_sweep(sweep_o);
    if (mi->parsed()) return cmd_mi(joint_path);
    if (rep->parsed()) return cmd_report(report_o, trials_path);
  } catch (const clinic::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kUsage;
}
