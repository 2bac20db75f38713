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

// Supervised training (token head and flow expert), reward shaping, group
// relative policy optimization, evaluation and latency benchmarking.

#ifndef DRIVEFLOW_TRAINING_H_
#define DRIVEFLOW_TRAINING_H_

#include <functional>
#include <string>
#include <vector>

#include "driveflow/metrics.h"
#include "driveflow/nnkit.h"
#include "driveflow/policy.h"

namespace driveflow {

enum class BenchmarkMode { kPdms, kEpdms };
std::string_view ToString(BenchmarkMode mode);
BenchmarkMode ParseBenchmarkMode(std::string_view s);

// ---------------------------------------------------------------------------
// Losses.

struct LmLossVars {
  Var lm;      // mean NLL over the whole sequence
  Var action;  // mean NLL over ACTION_START, codebook tokens and EOS
};

// Row i of `logits` scores targets[i]; the first `n_reason` targets are
// reasoning tokens.
LmLossVars LmLossFromLogits(Var logits, const std::vector<int>& targets, int n_reason,
                            const BoolMat* mask = nullptr);
LmLossVars LmLoss(Tape& tape, const Policy& policy, const ContextTokens& ctx,
                  const std::vector<int>& targets);

// One flow-matching training example with precomputed (constant) caches.
struct FmExample {
  LayerCaches caches;
  std::vector<bool> valid;
  Trajectory history;
  Mat target;  // horizon x 2 ego-frame offsets
};

FmExample MakeFmExample(const Policy& policy, const Scenario& scenario);

// Squared Frobenius norm of prediction - target, as a 1x1 Var.
Var FmLossTerm(Var prediction, Var target);

// Mean over the batch of |f(a_tau, tau, c) - (a - a_his)|^2 with tau and the
// anchor noise drawn from per-example streams keyed by `seed`.
Var FmLoss(Tape& tape, const Policy& policy, const std::vector<const FmExample*>& batch,
           uint64_t seed);

// ---------------------------------------------------------------------------
// Reward shaping.

struct RewardConfig {
  double lambda_n = 0.5;
  double lambda_r = 0.5;
  double lambda_c = 0.05;
  double delta = 2.0;       // m
  double l_tol = 4.0;       // reasoning tokens
  double gamma = 0.5;
  double kappa_align = 10.0;
  BenchmarkMode mode = BenchmarkMode::kPdms;
  MetricsConfig metrics;

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

// Mean distance over the common prefix of the two trajectories.
double AvgDistance(const Trajectory& traj, const Trajectory& reference);
double ReferenceMatch(const Trajectory& traj, const Trajectory& reference, double delta);
double CotPenalty(double length, double l_tol, double gamma);
bool AlignmentCheck(const std::vector<Lateral>& reasoning, const Trajectory& traj,
                    const ManeuverThresholds& thresholds = {});

struct RewardBreakdown {
  double r_driving = 0.0;
  double r_negative = 0.0;
  double r_recovery = 0.0;
  double r_cot = 0.0;
  bool alignment_violated = false;
  double w_n = 0.0;
  double w_r = 0.0;
  double lambda_c = 0.0;
  double total = 0.0;

  double Recompute() const { return r_driving - w_n * r_negative + w_r * r_recovery - lambda_c * r_cot; }
};

struct Candidate {
  std::vector<int> tokens;
  std::vector<Lateral> reasoning;
  Trajectory traj;  // empty when the plan is invalid
};

Candidate MakeCandidate(const Policy& policy, const Scenario& scenario,
                        const std::vector<int>& tokens);

RewardBreakdown TotalReward(const Scenario& scenario, const Candidate& candidate,
                            const RewardConfig& config);

std::vector<double> GroupAdvantage(const std::vector<double>& rewards);
double KlTerm(double logp_ref, double logp_current);

// ---------------------------------------------------------------------------
// Supervised fine-tuning.

struct SftConfig {
  int stage1_steps = 400;
  int stage2_steps = 2000;
  int batch_size = 8;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-3;
  double grad_clip = 1.0;
  uint64_t seed = 1;

  friend bool operator==(const SftConfig&, const SftConfig&) = default;
};

struct LossPoint {
  std::string stage;
  int step = 0;
  double loss = 0.0;
  double aux = 0.0;  // action loss for stage 1
};

struct SftResult {
  std::vector<LossPoint> stage1;
  std::vector<LossPoint> stage2;
  // Loss over the whole training set under a fixed draw, before and after
  // stage 2.
  double fm_initial = 0.0;
  double fm_final = 0.0;
  bool diverged = false;
  std::string message;
};

using LossLogger = std::function<void(const LossPoint&)>;

// Training examples for supervision: positive and recovery scenarios.
std::vector<Scenario> SupervisedSubset(const std::vector<Scenario>& data);

// Fits the codebook from the supervised references when the policy has none.
void EnsureCodebook(Policy& policy, const std::vector<Scenario>& data, uint64_t seed);

SftResult TrainSftStage1(Policy& policy, const std::vector<Scenario>& data,
                         const SftConfig& config, const LossLogger& log = {});
SftResult TrainSftStage2(Policy& policy, const std::vector<Scenario>& data,
                         const SftConfig& config, const LossLogger& log = {});
// Both stages. On a non-finite loss the parameters of the last good step are
// restored and training stops with diverged = true.
SftResult TrainSft(Policy& policy, const std::vector<Scenario>& data, const SftConfig& config,
                   const LossLogger& log = {});

// ---------------------------------------------------------------------------
// Reinforcement fine-tuning.

struct RftConfig {
  int group_size = 8;
  double eps_clip = 0.2;
  double beta = 0.01;
  double lr = 2e-5;
  double temperature = 1.0;
  double grad_clip = 1.0;
  uint64_t seed = 1;

  friend bool operator==(const RftConfig&, const RftConfig&) = default;
};

struct GroupLog {
  int step = 0;
  std::string phase;
  std::string scenario_id;
  Label label = Label::kPositive;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;
  std::vector<double> ratios;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double objective = 0.0;
  bool skipped = false;
};

// One GRPO update on query `q`. Flow-expert parameters are frozen.
GroupLog GrpoStep(Policy& policy, AdamState& optimizer, const Policy& reference,
                  const Scenario& q, const RftConfig& config, const RewardConfig& reward,
                  uint64_t step_seed);

struct RftResult {
  std::vector<GroupLog> log;
  int skipped = 0;
  AdamState optimizer;
};

using GroupLogger = std::function<void(const GroupLog&)>;

// Runs GRPO over `stream`; the first `warmup_count` entries form the warm-up
// phase.
RftResult RunRft(Policy& policy, const std::vector<Scenario>& stream, int warmup_count,
                 const RftConfig& config, const RewardConfig& reward,
                 const GroupLogger& log = {});

// ---------------------------------------------------------------------------
// Evaluation.

enum class PlannerKind { kAutoregressive, kFlow };
std::string_view ToString(PlannerKind kind);
PlannerKind ParsePlannerKind(std::string_view s);

struct EvalRow {
  std::string scenario_id;
  Label label = Label::kPositive;
  Archetype archetype = Archetype::kLaneChange;
  ScoreReport report;
  double ade = 0.0;
  Trajectory plan;
};

Trajectory Plan(const Policy& policy, const Scenario& scenario, PlannerKind kind,
                int flow_steps = -1);
std::vector<EvalRow> Evaluate(const Policy& policy, const std::vector<Scenario>& scenarios,
                              PlannerKind kind, const MetricsConfig& metrics = {},
                              int flow_steps = -1);
double MeanPdms(const std::vector<EvalRow>& rows);
double MeanEpdms(const std::vector<EvalRow>& rows);
double MeanAde(const std::vector<EvalRow>& rows);

// ---------------------------------------------------------------------------
// Latency.

struct LatencyRow {
  int waypoints = 0;
  std::vector<double> ar_seconds;
  std::vector<double> flow_seconds;
  double ar_median = 0.0;
  double flow_median = 0.0;
};

// Times autoregressive decoding and flow sampling for each waypoint count
// with models that copy every shape-compatible parameter of `trained`.
std::vector<LatencyRow> BenchLatency(const Policy& trained, const std::vector<Scenario>& scenarios,
                                     const std::vector<int>& waypoint_counts, int repeats,
                                     int flow_steps = 5);

double Median(std::vector<double> values);

}  // namespace driveflow

#endif  // DRIVEFLOW_TRAINING_H_
