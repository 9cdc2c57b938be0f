// Copyright 2026 The hoconv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "hoconv/config.hpp"
#include "hoconv/error.hpp"
#include "test_util.hpp"

using namespace hoconv;
using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return json::parse(in);
}

ExperimentConfig seeded(ExperimentConfig c) {
  apply_master_seed(c, c.seed);
  return c;
}

}  // namespace

TEST_CASE("empty object yields the defaults") {
  CHECK(config_to_json(config_from_json(json::object())) == config_to_json(seeded(ExperimentConfig{})));
}

TEST_CASE("round trip through JSON is exact") {
  ExperimentConfig c = benchmark_config();
  c.train.lr = 1.25e-3;
  c.readout.lambda_sweep = {0.5, 2.0};
  c.cell_subset = "expansion";
  c.model.order = 3;
  apply_master_seed(c, 99);
  const json j = config_to_json(c);
  CHECK(config_to_json(config_from_json(j)) == j);
}

TEST_CASE("checked-in configs match the built-in defaults") {
  const std::filesystem::path dir = HOCONV_SOURCE_DIR "/configs";
  CHECK(read_json(dir / "default.json") == config_to_json(seeded(ExperimentConfig{})));
  ExperimentConfig b = benchmark_config();
  b.out_dir = "runs/benchmark";
  CHECK(read_json(dir / "benchmark.json") == config_to_json(seeded(b)));
  CHECK_NOTHROW(load_config(dir / "smoke.json"));
}

TEST_CASE("master seed derives component seeds") {
  const ExperimentConfig a = config_from_json(json{{"seed", 5}});
  const ExperimentConfig b = config_from_json(json{{"seed", 6}});
  CHECK(a.seed == 5);
  CHECK(a.stimulus.seed != b.stimulus.seed);
  CHECK(config_to_json(a) == config_to_json(config_from_json(json{{"seed", 5}})));
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    config_from_json(json{{"model", {{"chanels1", 4}}}});
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.chanels1") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json(json{{"extra", 1}}), ConfigError);
}

TEST_CASE("wrong types and invalid values are rejected") {
  CHECK_THROWS_AS(config_from_json(json{{"train", {{"lr", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"channels1", -2}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"channels1", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"kind", "deep"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"order", 4}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"train", {{"fraction", 0.95}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"train", {{"fraction", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"cells", {{"subset", "best"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
}

TEST_CASE("model kind maps to the higher-order flag") {
  CHECK_FALSE(config_from_json(json{{"model", {{"kind", "baseline"}}}}).model.higher_order);
  CHECK(config_from_json(json{{"model", {{"kind", "hocnn"}}}}).model.higher_order);
}

TEST_CASE("load_config reports missing files and bad JSON") {
  hoconv::testing::TempDir tmp("config");
  CHECK_THROWS_AS(load_config(tmp.path / "absent.json"), Error);
  std::ofstream(tmp.path / "bad.json") << "{ \"seed\": ";
  CHECK_THROWS_AS(load_config(tmp.path / "bad.json"), ConfigError);
}
