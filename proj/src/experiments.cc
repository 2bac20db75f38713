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

#include "driveflow/experiments.h"

#include <chrono>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "driveflow/dataio.h"
#include "driveflow/random.h"
#include "driveflow/training.h"
#include "json.hpp"

namespace driveflow {
namespace {

constexpr uint64_t kHeldOutSalt = 0x4e1d0;

Policy StageTwoArm(const RunConfig& config, const PolicyConfig& arm_config, const Policy& stage1,
                   const std::vector<Scenario>& train, uint64_t seed, double* fm_final) {
  Policy p(arm_config, MixSeed(config.seed, seed));
  CopyLanguageModel(stage1, p);
  SftConfig sft = config.sft;
  sft.seed = seed;
  const SftResult r = TrainSftStage2(p, train, sft);
  if (r.diverged) throw std::runtime_error("stage 2 diverged: " + r.message);
  if (fm_final) *fm_final = r.fm_final;
  return p;
}

void FillScores(const Policy& policy, const RunConfig& config, const std::vector<Scenario>& heldout,
                PlannerKind kind, ArmResult& arm) {
  const auto rows = Evaluate(policy, heldout, kind, config.metrics, config.eval.flow_steps);
  arm.ade = MeanAde(rows);
  arm.pdms = MeanPdms(rows);
  arm.epdms = MeanEpdms(rows);
}

std::vector<Scenario> RecipeStreamFor(const std::vector<Scenario>& dataset, RftRecipe recipe,
                                      uint64_t seed, bool positives_only) {
  if (positives_only) {
    recipe.positive += recipe.negative + recipe.recovery;
    recipe.negative = 0;
    recipe.recovery = 0;
  }
  recipe.seed = MixSeed(recipe.seed, seed);
  return SampleRecipe(dataset, recipe).stream;
}

ArmResult RftArm(const RunConfig& config, const Policy& sft, const std::vector<Scenario>& stream,
                 const RewardConfig& reward, uint64_t seed, const std::vector<Scenario>& heldout,
                 const std::vector<Scenario>& heldout_negatives) {
  Policy p = sft;
  RftConfig rft = config.rft;
  rft.seed = MixSeed(rft.seed, seed);
  const RftResult r = RunRft(p, stream, config.recipe.warmup_count, rft, reward);
  ArmResult arm;
  arm.seed = seed;
  FillScores(p, config, heldout, PlannerKind::kAutoregressive, arm);
  arm.negative_match = NegativeMatch(p, heldout, heldout_negatives, reward.delta);
  double sum = 0.0;
  for (const GroupLog& g : r.log) sum += g.mean_reward;
  arm.mean_reward = r.log.empty() ? 0.0 : sum / static_cast<double>(r.log.size());
  return arm;
}

}  // namespace

std::string_view ToString(AblationKind kind) {
  switch (kind) {
    case AblationKind::kRecipe: return "recipe";
    case AblationKind::kLayers: return "layers";
    case AblationKind::kHistoryInit: return "history-init";
    case AblationKind::kShaping: return "shaping";
  }
  return "layers";
}

AblationKind ParseAblationKind(std::string_view s) {
  for (AblationKind k : {AblationKind::kRecipe, AblationKind::kLayers, AblationKind::kHistoryInit,
                         AblationKind::kShaping}) {
    if (ToString(k) == s) return k;
  }
  throw std::invalid_argument("unknown ablation kind '" + std::string(s) + "'");
}

std::vector<Scenario> HeldOutPositives(uint64_t seed, int count, std::vector<Scenario>* negatives) {
  std::vector<Scenario> out;
  const auto arch = AllArchetypes();
  if (negatives) negatives->clear();
  for (int i = 0; i < count; ++i) {
    const uint64_t s = MixSeed(seed ^ kHeldOutSalt, static_cast<uint64_t>(i));
    const Archetype a = arch[i % arch.size()];
    out.push_back(GenerateScenario(s, a, Label::kPositive));
    if (negatives) negatives->push_back(GenerateScenario(s, a, Label::kNegative));
  }
  return out;
}

void CopyLanguageModel(const Policy& from, Policy& to) {
  for (const auto& [name, value] : from.params().params()) {
    if (name.rfind(Policy::kBackbonePrefix, 0) == 0 || name.rfind(Policy::kHeadPrefix, 0) == 0) {
      to.mutable_params().Set(name, value);
    }
  }
  to.set_codebook(from.codebook());
}

Policy TrainStage1(const RunConfig& config, const std::vector<Scenario>& train) {
  Policy p(config.policy, config.seed);
  const SftResult r = TrainSftStage1(p, train, config.sft);
  if (r.diverged) throw std::runtime_error("stage 1 diverged: " + r.message);
  return p;
}

double NegativeMatch(const Policy& policy, const std::vector<Scenario>& positives,
                     const std::vector<Scenario>& negatives, double delta) {
  if (positives.size() != negatives.size()) {
    throw std::invalid_argument("negative_match: unpaired scenario lists");
  }
  if (positives.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < positives.size(); ++i) {
    const Trajectory plan = policy.PlanAutoregressive(positives[i], DecodeOptions{});
    sum += plan.empty() ? 0.0 : ReferenceMatch(plan, negatives[i].reference, delta);
  }
  return sum / static_cast<double>(positives.size());
}

double FlowGenerationSeconds(const Policy& policy, const std::vector<Scenario>& scenarios,
                             int repeats) {
  using Clock = std::chrono::steady_clock;
  std::vector<double> times;
  for (const Scenario& s : scenarios) {
    const ContextTokens ctx = EncodeContextFeatures(s, policy.config().max_context);
    DecodeOptions opts;
    opts.stop_at_action_start = true;
    const DecodeResult r = policy.Decode(ctx, opts);
    const auto valid = Policy::CacheValid(ctx, static_cast<int>(r.tokens.size()) + 1);
    for (int k = 0; k < repeats; ++k) {
      const auto t0 = Clock::now();
      policy.FlowSample(r.caches, valid, s.ego_history, policy.config().flow_steps);
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
  }
  return times.empty() ? 0.0 : Median(times);
}

AblationResult AblateLayers(const RunConfig& config, const Policy& stage1,
                            const std::vector<Scenario>& train,
                            const std::vector<Scenario>& heldout,
                            const std::vector<int>& intervals,
                            const std::vector<uint64_t>& seeds, int timing_repeats) {
  AblationResult result{AblationKind::kLayers, {}};
  for (int interval : intervals) {
    PolicyConfig pc = config.policy;
    pc.sparse_interval = interval;
    for (uint64_t seed : seeds) {
      ArmResult arm;
      arm.arm = interval >= pc.n_layers ? "last-only" : "interval-" + std::to_string(interval);
      arm.setting = interval;
      arm.seed = seed;
      const Policy p = StageTwoArm(config, pc, stage1, train, seed, &arm.fm_final);
      FillScores(p, config, heldout, PlannerKind::kFlow, arm);
      arm.generation_seconds = FlowGenerationSeconds(p, heldout, timing_repeats);
      result.arms.push_back(arm);
    }
  }
  return result;
}

AblationResult AblateHistoryInit(const RunConfig& config, const Policy& stage1,
                                 const std::vector<Scenario>& train,
                                 const std::vector<Scenario>& heldout,
                                 const std::vector<uint64_t>& seeds) {
  AblationResult result{AblationKind::kHistoryInit, {}};
  for (bool hi : {true, false}) {
    PolicyConfig pc = config.policy;
    pc.history_init = hi;
    for (uint64_t seed : seeds) {
      ArmResult arm;
      arm.arm = hi ? "history-init" : "zero-anchor";
      arm.setting = hi ? 1.0 : 0.0;
      arm.seed = seed;
      const Policy p = StageTwoArm(config, pc, stage1, train, seed, &arm.fm_final);
      FillScores(p, config, heldout, PlannerKind::kFlow, arm);
      result.arms.push_back(arm);
    }
  }
  return result;
}

AblationResult AblateRecipe(const RunConfig& config, const Policy& sft,
                            const std::vector<Scenario>& dataset,
                            const std::vector<Scenario>& heldout,
                            const std::vector<Scenario>& heldout_negatives,
                            const std::vector<uint64_t>& seeds) {
  AblationResult result{AblationKind::kRecipe, {}};
  const RewardConfig reward = Normalize(config).reward;
  ArmResult base;
  base.arm = "sft";
  FillScores(sft, config, heldout, PlannerKind::kAutoregressive, base);
  base.negative_match = NegativeMatch(sft, heldout, heldout_negatives, reward.delta);
  result.arms.push_back(base);
  for (uint64_t seed : seeds) {
    for (bool pos_only : {true, false}) {
      const auto stream = RecipeStreamFor(dataset, config.recipe, seed, pos_only);
      ArmResult arm = RftArm(config, sft, stream, reward, seed, heldout, heldout_negatives);
      arm.arm = pos_only ? "positive-only" : "mixed";
      arm.setting = pos_only ? 0.0 : 1.0;
      result.arms.push_back(arm);
    }
  }
  return result;
}

AblationResult AblateShaping(const RunConfig& config, const Policy& sft,
                             const std::vector<Scenario>& dataset,
                             const std::vector<Scenario>& heldout,
                             const std::vector<Scenario>& heldout_negatives,
                             const std::vector<double>& weights,
                             const std::vector<uint64_t>& seeds) {
  AblationResult result{AblationKind::kShaping, {}};
  for (double w : weights) {
    RewardConfig reward = Normalize(config).reward;
    reward.lambda_n = w;
    for (uint64_t seed : seeds) {
      const auto stream = RecipeStreamFor(dataset, config.recipe, seed, false);
      ArmResult arm = RftArm(config, sft, stream, reward, seed, heldout, heldout_negatives);
      std::ostringstream name;
      name << "lambda_n=" << w;
      arm.arm = name.str();
      arm.setting = w;
      result.arms.push_back(arm);
    }
  }
  return result;
}

std::string AblationToJson(const AblationResult& result) {
  nlohmann::json arms = nlohmann::json::array();
  for (const ArmResult& a : result.arms) {
    arms.push_back({{"arm", a.arm},
                    {"setting", a.setting},
                    {"seed", a.seed},
                    {"ADE_m", a.ade},
                    {"PDMS", a.pdms},
                    {"EPDMS", a.epdms},
                    {"generation_s", a.generation_seconds},
                    {"negative_match", a.negative_match},
                    {"fm_final", a.fm_final},
                    {"mean_reward", a.mean_reward}});
  }
  nlohmann::json j = {{"kind", std::string(ToString(result.kind))}, {"arms", arms}};
  return j.dump(1) + "\n";
}

std::string AblationToText(const AblationResult& result) {
  std::ostringstream out;
  out << "ablation " << ToString(result.kind) << "\n";
  out << std::left << std::setw(16) << "arm" << std::right << std::setw(8) << "seed"
      << std::setw(10) << "ADE" << std::setw(10) << "PDMS" << std::setw(10) << "EPDMS"
      << std::setw(12) << "gen_ms" << std::setw(10) << "neg_RM" << std::setw(10) << "reward"
      << "\n";
  for (const ArmResult& a : result.arms) {
    out << std::left << std::setw(16) << a.arm << std::right << std::setw(8) << a.seed
        << std::fixed << std::setprecision(4) << std::setw(10) << a.ade << std::setw(10) << a.pdms
        << std::setw(10) << a.epdms << std::setw(12) << a.generation_seconds * 1e3
        << std::setw(10) << a.negative_match << std::setw(10) << a.mean_reward << "\n";
  }
  return out.str();
}

}  // namespace driveflow
