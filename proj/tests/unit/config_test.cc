// Copyright 2026 The Driveflow Authors
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

#include <stdexcept>
#include <string>

#include "doctest.h"
#include "driveflow/config.h"

namespace driveflow {
namespace {

TEST_CASE("config defaults are fully materialized and round-trip") {
  const RunConfig d = Normalize(RunConfig{});
  const std::string text = ConfigToJson(d);
  CHECK(ConfigFromJson(text) == d);
  CHECK(ConfigFromJson("{}") == d);
  for (const char* key : {"\"policy\"", "\"metrics\"", "\"sft\"", "\"rft\"", "\"reward\"",
                          "\"recipe\"", "\"data\"", "\"eval\"", "\"benchmark_mode\"", "\"seed\"",
                          "\"lambda_n\"", "\"kappa_align\"", "\"tau_shift\"", "\"group_size\""}) {
    CHECK_MESSAGE(text.find(key) != std::string::npos, key);
  }
}

TEST_CASE("config partial files override only the given keys") {
  const RunConfig c = ConfigFromJson(
      R"({"seed": 9, "benchmark_mode": "epdms", "rft": {"beta": 0.0}, "data": {"archetypes": ["vru"]}})");
  CHECK(c.seed == 9);
  CHECK(c.benchmark_mode == BenchmarkMode::kEpdms);
  CHECK(c.reward.mode == BenchmarkMode::kEpdms);
  CHECK(c.rft.beta == 0.0);
  CHECK(c.rft.group_size == RftConfig{}.group_size);
  REQUIRE(c.data.archetypes.size() == 1);
  CHECK(c.data.archetypes[0] == Archetype::kVru);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_WITH_AS(ConfigFromJson(R"({"polcy": {}})"), doctest::Contains("polcy"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(ConfigFromJson(R"({"rft": {"betta": 1}})"), doctest::Contains("rft.betta"),
                       std::invalid_argument);
  CHECK_THROWS_AS(ConfigFromJson(R"({"rft": {"beta": "x"}})"), std::invalid_argument);
  CHECK_THROWS_AS(ConfigFromJson(R"({"benchmark_mode": "navsim"})"), std::invalid_argument);
  CHECK_THROWS_AS(ConfigFromJson(R"({"policy": {"n_heads": 3}})"), std::invalid_argument);
  CHECK_THROWS_AS(ConfigFromJson(R"({"data": {"neg_frac": 0.7, "rec_frac": 0.7}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ConfigFromJson("{"), std::invalid_argument);
}

TEST_CASE("config hash is stable and sensitive") {
  const RunConfig a = Normalize(RunConfig{});
  RunConfig b = a;
  CHECK(ConfigHash(a) == ConfigHash(b));
  CHECK(ConfigHash(a).size() == 16);
  b.reward.delta = 2.5;
  CHECK(ConfigHash(a) != ConfigHash(b));
}

}  // namespace
}  // namespace driveflow
