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

// Ablation harness shared by the CLI and the acceptance suite.

#ifndef DRIVEFLOW_EXPERIMENTS_H_
#define DRIVEFLOW_EXPERIMENTS_H_

#include <string>
#include <vector>

#include "driveflow/config.h"
#include "driveflow/microworld.h"
#include "driveflow/policy.h"

namespace driveflow {

enum class AblationKind { kRecipe, kLayers, kHistoryInit, kShaping };
std::string_view ToString(AblationKind kind);
AblationKind ParseAblationKind(std::string_view s);

struct ArmResult {
  std::string arm;
  double setting = 0.0;  // interval, history flag, recipe id or negative weight
  uint64_t seed = 0;
  double ade = 0.0;
  double pdms = 0.0;
  double epdms = 0.0;
  // Median seconds per flow sample given the encoder caches.
  double generation_seconds = 0.0;
  // Mean reference match of plans against the negative siblings' references.
  double negative_match = 0.0;
  double fm_final = 0.0;
  double mean_reward = 0.0;
};

struct AblationResult {
  AblationKind kind = AblationKind::kLayers;
  std::vector<ArmResult> arms;
};

// Held-out suite: `count` positives with archetypes cycling; `negatives`
// receives their negative siblings when non-null.
std::vector<Scenario> HeldOutPositives(uint64_t seed, int count,
                                       std::vector<Scenario>* negatives = nullptr);

// Copies the encoder, token head and codebook of `from` into `to`.
void CopyLanguageModel(const Policy& from, Policy& to);

// Trains stage 1 once; returns the policy.
Policy TrainStage1(const RunConfig& config, const std::vector<Scenario>& train);

// Interval "last-only" is encoded as the layer count.
AblationResult AblateLayers(const RunConfig& config, const Policy& stage1,
                            const std::vector<Scenario>& train,
                            const std::vector<Scenario>& heldout,
                            const std::vector<int>& intervals,
                            const std::vector<uint64_t>& seeds, int timing_repeats = 3);

AblationResult AblateHistoryInit(const RunConfig& config, const Policy& stage1,
                                 const std::vector<Scenario>& train,
                                 const std::vector<Scenario>& heldout,
                                 const std::vector<uint64_t>& seeds);

// Arms "sft" (no update), "positive-only" and "mixed" with equal budgets.
AblationResult AblateRecipe(const RunConfig& config, const Policy& sft,
                            const std::vector<Scenario>& dataset,
                            const std::vector<Scenario>& heldout,
                            const std::vector<Scenario>& heldout_negatives,
                            const std::vector<uint64_t>& seeds);

// Mixed recipe with each negative weight.
AblationResult AblateShaping(const RunConfig& config, const Policy& sft,
                             const std::vector<Scenario>& dataset,
                             const std::vector<Scenario>& heldout,
                             const std::vector<Scenario>& heldout_negatives,
                             const std::vector<double>& weights,
                             const std::vector<uint64_t>& seeds);

// Mean reference match of the autoregressive plans for `positives` against
// the references of their paired `negatives`.
double NegativeMatch(const Policy& policy, const std::vector<Scenario>& positives,
                     const std::vector<Scenario>& negatives, double delta);

// Median seconds per flow sample over the held-out suite.
double FlowGenerationSeconds(const Policy& policy, const std::vector<Scenario>& scenarios,
                             int repeats);

std::string AblationToJson(const AblationResult& result);
std::string AblationToText(const AblationResult& result);

}  // namespace driveflow

#endif  // DRIVEFLOW_EXPERIMENTS_H_
