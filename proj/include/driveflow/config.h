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

// Run configuration: every module hyperparameter in one sectioned document
// with all defaults materialized.

#ifndef DRIVEFLOW_CONFIG_H_
#define DRIVEFLOW_CONFIG_H_

#include <cstdint>
#include <string>
#include <vector>

#include "driveflow/metrics.h"
#include "driveflow/policy.h"
#include "driveflow/training.h"

namespace driveflow {

struct RftRecipe {
  int warmup_count = 80;
  int positive = 120;
  int negative = 20;
  int recovery = 20;
  uint64_t seed = 1;

  int total() const { return warmup_count + positive + negative + recovery; }
  friend bool operator==(const RftRecipe&, const RftRecipe&) = default;
};

struct DataConfig {
  int count = 300;
  double neg_frac = 0.1;
  double rec_frac = 0.1;
  std::vector<Archetype> archetypes = AllArchetypes();

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  PlannerKind planner = PlannerKind::kAutoregressive;
  int flow_steps = 5;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  uint64_t seed = 1;
  BenchmarkMode benchmark_mode = BenchmarkMode::kPdms;
  PolicyConfig policy;
  MetricsConfig metrics;
  SftConfig sft;
  RftConfig rft;
  RewardConfig reward;
  RftRecipe recipe;
  DataConfig data;
  EvalConfig eval;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Fully materialized, canonical JSON (sorted keys, two-space indent).
std::string ConfigToJson(const RunConfig& config);
// Missing keys take defaults; unknown keys and bad values throw
// std::invalid_argument naming the key.
RunConfig ConfigFromJson(const std::string& text);
RunConfig LoadConfig(const std::string& path);
// FNV-1a of the canonical JSON, as 16 hex digits.
std::string ConfigHash(const RunConfig& config);
// Copies shared settings (benchmark mode, metric bounds) into the sections
// that consume them.
RunConfig Normalize(RunConfig config);

}  // namespace driveflow

#endif  // DRIVEFLOW_CONFIG_H_
