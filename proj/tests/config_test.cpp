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

#include <filesystem>
#include <fstream>

#include "clinic/config.hpp"
#include "clinic/errors.hpp"
#include "doctest.h"

using namespace clinic;

TEST_CASE("defaults round-trip through JSON") {
  const auto j = config::default_json();
  const auto c = config::parse(j);
  CHECK(c.train.lambda == train::TrainConfig{}.lambda);
  CHECK(c.model.normalize_output);
  CHECK(c.data.rho == 0.0);
  nlohmann::json again = c;
  CHECK(again == j);
}

TEST_CASE("overrides") {
  auto j = config::default_json();
  config::apply_override(j, "train.lambda=10");
  config::apply_override(j, "train.method=ADV");
  config::apply_override(j, "data.rho=0.8");
  config::apply_override(j, "model.hidden=[32,16]");
  config::apply_override(j, "train.regularizer.strategy=S2");
  const auto c = config::parse(j);
  CHECK(c.train.lambda == 10.0);
  CHECK(c.train.method == train::Method::kADV);
  CHECK(c.data.rho == 0.8);
  CHECK(c.model.hidden == std::vector<std::size_t>{32, 16});
  CHECK(c.train.reg.strategy == losses::Strategy::kS2);
}

TEST_CASE("bad overrides name the key") {
  auto j = config::default_json();
  CHECK_THROWS_WITH_AS(config::apply_override(j, "train.lambada=1"),
                       doctest::Contains("train.lambada"), ConfigError);
  CHECK_THROWS_WITH_AS(config::apply_override(j, "train.max_steps=-5"),
                       doctest::Contains("train.max_steps"), ConfigError);
  CHECK_THROWS_WITH_AS(config::apply_override(j, "train.lambda=abc"),
                       doctest::Contains("train.lambda"), ConfigError);
  CHECK_THROWS_AS(config::apply_override(j, "noequals"), ConfigError);
  CHECK_THROWS_AS(config::apply_override(j, "=3"), ConfigError);
  CHECK(j == config::default_json());
}

TEST_CASE("merge rejects unknown keys and wrong types") {
  auto j = config::default_json();
  CHECK_THROWS_AS(config::merge_checked(j, {{"trian", {{"lambda", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config::merge_checked(j, {{"train", 3}}), ConfigError);
  CHECK_THROWS_AS(config::merge_checked(j, nlohmann::json::array()), ConfigError);
  config::merge_checked(j, {{"train", {{"lambda", 2}}}});
  CHECK(j["train"]["lambda"].get<double>() == 2.0);
}

TEST_CASE("semantic validation happens at parse") {
  auto j = config::default_json();
  config::apply_override(j, "data.rho=1.5");
  CHECK_THROWS_AS(config::parse(j), ConfigError);
  j = config::default_json();
  config::apply_override(j, "model.dropout=1.0");
  CHECK_THROWS_AS(config::parse(j), ConfigError);
  j = config::default_json();
  config::apply_override(j, "train.batch_size=1");
  CHECK_THROWS_AS(config::parse(j), ConfigError);
}

TEST_CASE("resolve merges file then overrides") {
  const auto path = std::filesystem::temp_directory_path() / "clinic_config_test.json";
  {
    std::ofstream out(path);
    out << R"({"train": {"lambda": 0.1, "max_steps": 77}})";
  }
  const std::string ov[] = {"train.lambda=1"};
  const auto j = config::resolve(path, ov);
  CHECK(j["train"]["lambda"].get<double>() == 1.0);
  CHECK(j["train"]["max_steps"].get<std::size_t>() == 77);
  {
    std::ofstream out(path);
    out << "{not json";
  }
  CHECK_THROWS_AS(config::resolve(path, {}), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(config::resolve(path, {}), ConfigError);
}

TEST_CASE("hash and manifest") {
  const auto a = config::default_json();
  auto b = a;
  config::apply_override(b, "train.seed=1");
  CHECK(config::config_hash(a) == config::config_hash(a));
  CHECK(config::config_hash(a) != config::config_hash(b));
  CHECK(config::config_hash(a).size() == 16);
  const auto m = config::manifest(a, 4, {{"rows", 10}});
  CHECK(m["seed"] == 4);
  CHECK(m["rows"] == 10);
  CHECK(m["version"] == CLINIC_VERSION);
  CHECK(m["config"] == a);
}

TEST_CASE("datasets load from CSV when configured") {
  data::SynthConfig s;
  s.n = 300;
  const auto ds = data::generate(s);
  const auto path = std::filesystem::temp_directory_path() / "clinic_config_data.csv";
  data::write_csv(ds, path);
  auto c = config::parse(config::default_json());
  c.data_csv = path.string();
  const auto loaded = config::load_dataset(c);
  CHECK(loaded.size() == 300);
  CHECK(loaded.examples() == ds.examples());
  std::filesystem::remove(path);
}
