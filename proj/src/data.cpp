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

#include "clinic/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "clinic/errors.hpp"

namespace clinic::data {

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"num_classes", c.num_classes},   {"num_sensitive", c.num_sensitive},
       {"rho", c.rho},                   {"dim", c.dim},
       {"means", c.means},               {"y_signal", c.y_signal},
       {"s_signal", c.s_signal},         {"noise_sigma", c.noise_sigma},
       {"n", c.n},                       {"seed", c.seed},
       {"train_fraction", c.train_fraction}, {"dev_fraction", c.dev_fraction}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.num_sensitive = j.value("num_sensitive", d.num_sensitive);
  c.rho = j.value("rho", d.rho);
  c.dim = j.value("dim", d.dim);
  c.means = j.value("means", d.means);
  c.y_signal = j.value("y_signal", d.y_signal);
  c.s_signal = j.value("s_signal", d.s_signal);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.n = j.value("n", d.n);
  c.seed = j.value("seed", d.seed);
  c.train_fraction = j.value("train_fraction", d.train_fraction);
  c.dev_fraction = j.value("dev_fraction", d.dev_fraction);
}

void validate(const SynthConfig& c) {
  if (c.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (c.num_sensitive < 2) throw ConfigError("num_sensitive must be >= 2");
  if (!(c.rho >= 0.0 && c.rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(c.noise_sigma > 0.0) || !std::isfinite(c.noise_sigma)) {
    throw ConfigError("noise_sigma must be > 0");
  }
  if (c.dim == 0) throw ConfigError("dim must be positive");
  if (c.n == 0) throw ConfigError("n must be positive");
  if (!(c.train_fraction > 0.0) || !(c.dev_fraction >= 0.0) ||
      c.train_fraction + c.dev_fraction > 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= dev, train + dev <= 1");
  }
  const auto cells = static_cast<std::size_t>(c.num_classes * c.num_sensitive);
  if (!c.means.empty()) {
    if (c.means.size() != cells) {
      throw ConfigError(fmt::format("means needs {} entries (|Y|·|S|), got {}", cells,
                                    c.means.size()));
    }
    for (const auto& m : c.means) {
      if (m.size() != c.dim) throw ConfigError("every mean vector must have length dim");
    }
  } else if (c.dim < static_cast<std::size_t>(c.num_classes + c.num_sensitive)) {
    throw ConfigError("default mean geometry needs dim >= num_classes + num_sensitive");
  }
}

std::vector<std::vector<double>> resolved_means(const SynthConfig& c) {
  if (!c.means.empty()) return c.means;
  std::vector<std::vector<double>> means;
  for (int y = 0; y < c.num_classes; ++y) {
    for (int s = 0; s < c.num_sensitive; ++s) {
      std::vector<double> m(c.dim, 0.0);
      m[static_cast<std::size_t>(y)] = c.y_signal;
      m[static_cast<std::size_t>(c.num_classes + s)] = c.s_signal;
      means.push_back(std::move(m));
    }
  }
  return means;
}

info::DiscreteJoint label_joint(const SynthConfig& c) {
  validate(c);
  const double py = 1.0 / c.num_classes;
  std::vector<double> probs;
  for (int y = 0; y < c.num_classes; ++y) {
    for (int s = 0; s < c.num_sensitive; ++s) {
      const double ps = (1.0 - c.rho) / c.num_sensitive +
                        (s == y % c.num_sensitive ? c.rho : 0.0);
      probs.push_back(py * ps);
    }
  }
  return info::DiscreteJoint({{"Y", static_cast<std::size_t>(c.num_classes)},
                              {"S", static_cast<std::size_t>(c.num_sensitive)}},
                             std::move(probs));
}

info::DiscreteJoint component_joint(const SynthConfig& c) {
  const auto ys = label_joint(c);
  const auto cells = static_cast<std::size_t>(c.num_classes * c.num_sensitive);
  std::vector<double> probs(cells * cells, 0.0);
  // Axes (Z, S, Y) with Z the mixture component y·|S| + s, S-major inside.
  for (int y = 0; y < c.num_classes; ++y) {
    for (int s = 0; s < c.num_sensitive; ++s) {
      const auto z = static_cast<std::size_t>(y * c.num_sensitive + s);
      const std::size_t flat = (z * static_cast<std::size_t>(c.num_sensitive) +
                                static_cast<std::size_t>(s)) *
                                   static_cast<std::size_t>(c.num_classes) +
                               static_cast<std::size_t>(y);
      const std::size_t idx[] = {static_cast<std::size_t>(y), static_cast<std::size_t>(s)};
      probs[flat] = ys.at(idx);
    }
  }
  return info::DiscreteJoint({{"Z", cells},
                              {"S", static_cast<std::size_t>(c.num_sensitive)},
                              {"Y", static_cast<std::size_t>(c.num_classes)}},
                             std::move(probs));
}

Dataset::Dataset(std::vector<LabeledExample> examples, int num_classes, int num_sensitive,
                 double train_fraction, double dev_fraction, std::uint64_t split_seed)
    : examples_(std::move(examples)), num_classes_(num_classes), num_sensitive_(num_sensitive) {
  if (examples_.empty()) throw DataError("dataset is empty");
  dim_ = examples_.front().features.size();
  for (const auto& e : examples_) {
    if (e.features.size() != dim_) throw DataError("examples differ in feature dimension");
    if (e.y < 0 || e.y >= num_classes_ || e.s < 0 || e.s >= num_sensitive_) {
      throw DataError("label out of range");
    }
    for (double v : e.features) {
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
  }
  const std::size_t n = examples_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  const auto n_dev = static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(n)));
  train_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  dev_.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
              order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  test_.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), order.end());

  train_marginals_.y_counts.assign(static_cast<std::size_t>(num_classes_), 0);
  train_marginals_.s_counts.assign(static_cast<std::size_t>(num_sensitive_), 0);
  for (std::size_t i : train_) {
    ++train_marginals_.y_counts[static_cast<std::size_t>(examples_[i].y)];
    ++train_marginals_.s_counts[static_cast<std::size_t>(examples_[i].s)];
  }
}

const std::vector<std::size_t>& Dataset::split(Split which) const {
  switch (which) {
    case Split::kTrain: return train_;
    case Split::kDev: return dev_;
    case Split::kTest: return test_;
  }
  return train_;
}

Dataset generate(const SynthConfig& cfg) {
  validate(cfg);
  const auto means = resolved_means(cfg);
  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> pick_y(0, cfg.num_classes - 1);
  std::uniform_int_distribution<int> pick_s(0, cfg.num_sensitive - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  std::vector<LabeledExample> out;
  out.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    LabeledExample e;
    e.y = pick_y(rng);
    e.s = unit(rng) < cfg.rho ? e.y % cfg.num_sensitive : pick_s(rng);
    const auto& m = means[static_cast<std::size_t>(e.y * cfg.num_sensitive + e.s)];
    e.features.resize(cfg.dim);
    for (std::size_t k = 0; k < cfg.dim; ++k) e.features[k] = m[k] + noise(rng);
    out.push_back(std::move(e));
  }
  return Dataset(std::move(out), cfg.num_classes, cfg.num_sensitive, cfg.train_fraction,
                 cfg.dev_fraction, derive_seed(cfg.seed, "split"));
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  std::string line;
  for (std::size_t k = 0; k < ds.dim(); ++k) line += fmt::format("f{},", k);
  line += "y,s\n";
  out << line;
  for (const auto& e : ds.examples()) {
    line.clear();
    for (double v : e.features) fmt::format_to(std::back_inserter(line), "{},", v);
    fmt::format_to(std::back_inserter(line), "{},{}\n", e.y, e.s);
    out << line;
  }
  if (!out) throw DataError("write to " + path.string() + " failed");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view v) {
  while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.remove_prefix(1);
  while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r')) {
    v.remove_suffix(1);
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, double train_fraction,
                 double dev_fraction, std::uint64_t split_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file, expected a header row", 1);
  const auto header = split_fields(trim(line));
  std::ptrdiff_t y_col = -1, s_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    if (name == "y") {
      y_col = static_cast<std::ptrdiff_t>(c);
    } else if (name == "s") {
      s_col = static_cast<std::ptrdiff_t>(c);
    } else {
      feature_cols.push_back(c);
    }
  }
  if (y_col < 0) throw DataError("missing column \"y\"", 1);
  if (s_col < 0) throw DataError("missing column \"s\"", 1);
  if (feature_cols.empty()) throw DataError("no feature columns", 1);

  std::vector<LabeledExample> rows;
  int max_y = 0, max_s = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_fields(body);
    if (fields.size() != header.size()) {
      throw DataError(fmt::format("expected {} fields, found {}", header.size(), fields.size()),
                      line_no);
    }
    LabeledExample e;
    e.features.reserve(feature_cols.size());
    for (std::size_t c : feature_cols) {
      const auto f = trim(fields[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw DataError(fmt::format("non-numeric value '{}' in column {}", f, trim(header[c])),
                        line_no);
      }
      e.features.push_back(v);
    }
    auto parse_label = [&](std::ptrdiff_t col, const char* name) {
      const auto f = trim(fields[static_cast<std::size_t>(col)]);
      int v = -1;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || v < 0) {
        throw DataError(fmt::format("column {} needs a non-negative integer, found '{}'", name, f),
                        line_no);
      }
      return v;
    };
    e.y = parse_label(y_col, "y");
    e.s = parse_label(s_col, "s");
    max_y = std::max(max_y, e.y);
    max_s = std::max(max_s, e.s);
    rows.push_back(std::move(e));
  }
  if (rows.empty()) throw DataError("no data rows", line_no);
  return Dataset(std::move(rows), std::max(2, max_y + 1), std::max(2, max_s + 1),
                 train_fraction, dev_fraction, split_seed);
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.x = ad::Tensor(indices.size(), ds.dim());
  b.y.reserve(indices.size());
  b.s.reserve(indices.size());
  b.index.assign(indices.begin(), indices.end());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& e = ds.examples().at(indices[r]);
    std::copy(e.features.begin(), e.features.end(), b.x.row_span(r).begin());
    b.y.push_back(e.y);
    b.s.push_back(e.s);
  }
  return b;
}

Batch gather(const Dataset& ds, Split which) { return gather(ds, ds.split(which)); }

Batch sample_batch(const Dataset& ds, Split which, std::size_t batch_size, Rng& rng) {
  const auto& pool = ds.split(which);
  if (batch_size == 0 || batch_size > pool.size()) {
    throw ConfigError(fmt::format("batch size {} exceeds split size {}", batch_size, pool.size()));
  }
  // Partial Fisher–Yates over a copy of the split.
  std::vector<std::size_t> idx = pool;
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(batch_size);
  return gather(ds, idx);
}

}  // namespace clinic::data
