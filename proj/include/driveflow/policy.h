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

// Planning model: context features, a prefix-LM transformer backbone with a
// token head over reasoning and codebook action tokens, and a flow-matching
// action expert that reads selected layers of the backbone's key/value
// caches.

#ifndef DRIVEFLOW_POLICY_H_
#define DRIVEFLOW_POLICY_H_

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "driveflow/microworld.h"
#include "driveflow/nnkit.h"

namespace driveflow {

struct PolicyConfig {
  int d_model = 128;
  int n_layers = 8;
  int n_heads = 4;
  int ff_mult = 2;
  int d_bridge = 64;
  int n_queries = 10;
  int horizon = kHorizonSteps;
  int codebook_size = 256;
  int max_context = 32;
  int max_reason = 4;
  int sparse_interval = 2;
  int history_hidden = 64;
  int flow_steps = 5;
  double tau_shift = 0.0;
  double noise_std = 0.25;
  bool history_init = true;

  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

// Validates ranges and divisibility; throws std::invalid_argument.
void ValidatePolicyConfig(const PolicyConfig& config);

// {interval-1, 2*interval-1, ...} plus the final layer, sorted and unique.
std::vector<int> SelectSparseLayers(int n_layers, int interval);

// ---------------------------------------------------------------------------
// Action codebook.

using Motion = std::array<double, 3>;  // dx, dy, dheading in the segment frame

struct ActionCodebook {
  std::vector<Motion> centroids;  // index 0 is the exact zero motion
  uint64_t seed = 0;

  int size() const { return static_cast<int>(centroids.size()); }
  friend bool operator==(const ActionCodebook&, const ActionCodebook&) = default;
};

// Segments between consecutive waypoints, each in the frame of its start.
std::vector<Motion> ExtractMotions(const Trajectory& traj);

// k-means (k-means++ seeding) over motions with the heading axis weighted.
// Throws if there are fewer than K distinct motions.
ActionCodebook FitCodebook(const std::vector<Motion>& motions, int k, uint64_t seed);

// Closed-loop tokenization: each step picks the centroid nearest to the next
// waypoint seen from the reconstructed pose. Ties go to the lowest index.
std::vector<int> Tokenize(const ActionCodebook& codebook, const Trajectory& traj);

// Chains centroids from `start`; returns start plus one pose per token.
Trajectory Detokenize(const ActionCodebook& codebook, const std::vector<int>& tokens,
                      const Waypoint& start, double dt = kStepSeconds, int t0 = 0);

// ---------------------------------------------------------------------------
// Vocabulary and grammar: REASON{0..max} ACTION_START CODEBOOK{horizon} EOS.

struct Vocabulary {
  int codebook_size = 0;

  int reason(Lateral l) const { return codebook_size + static_cast<int>(l); }
  int action_start() const { return codebook_size + kNumLateral; }
  int eos() const { return codebook_size + kNumLateral + 1; }
  int bos() const { return codebook_size + kNumLateral + 2; }  // input only
  int size() const { return codebook_size + kNumLateral + 2; }
  bool is_codebook(int t) const { return t >= 0 && t < codebook_size; }
  bool is_reason(int t) const { return t >= codebook_size && t < action_start(); }
  Lateral lateral(int t) const { return static_cast<Lateral>(t - codebook_size); }
};

// Allowed next tokens after `prefix` (which excludes BOS). Empty when the
// sequence is complete.
std::vector<bool> GrammarAllowed(const Vocabulary& vocab, const std::vector<int>& prefix,
                                 int horizon, int max_reason);

// True when `tokens` is a complete grammatical sequence.
bool IsGrammatical(const Vocabulary& vocab, const std::vector<int>& tokens, int horizon,
                   int max_reason);

std::vector<int> TargetSequence(const Vocabulary& vocab, const std::vector<Lateral>& tags,
                                const std::vector<int>& action_tokens);

struct ParsedSequence {
  std::vector<Lateral> reasons;
  std::vector<int> actions;
};
// Throws std::invalid_argument on a grammar violation.
ParsedSequence ParseSequence(const Vocabulary& vocab, const std::vector<int>& tokens,
                             int horizon, int max_reason);

// ---------------------------------------------------------------------------
// Context features.

enum class ContextType { kEgo, kInstruction, kObstacle, kRoute, kBoundary, kLane, kLight };
inline constexpr int kNumContextTypes = 7;
inline constexpr int kContextPayload = 12;
inline constexpr int kContextFeatures = kNumContextTypes + kContextPayload;
inline constexpr int kHistoryFeatures = (kHistorySteps + 1) * 4;

struct ContextTokens {
  Mat features;             // rows x kContextFeatures
  std::vector<bool> valid;  // false marks padding

  int length() const { return static_cast<int>(valid.size()); }
  int num_valid() const;
};

// Observable scene state at t = 0 in the ego frame. Throws if the token
// count exceeds max_context.
ContextTokens EncodeContextFeatures(const Scenario& scenario, int max_context);
ContextTokens PadContext(const ContextTokens& tokens, int length);

// Ego-frame history poses (x, y, cos, sin), oldest first.
Mat HistoryFeatures(const Trajectory& history);
Waypoint CurrentPose(const Scenario& scenario);

// ---------------------------------------------------------------------------
// Flow matching primitives.

double SampleTau(Rng& rng, double shift);
double SampleTau(uint64_t seed, double shift);
Mat FmInterpolate(const Mat& a, const Mat& a_his, double tau);

using VectorField = std::function<Mat(const Mat& a, double tau)>;
// Euler integration from a_his over `steps` uniform steps. Returns nullopt
// on a non-finite intermediate.
std::optional<Mat> FmIntegrate(const VectorField& field, const Mat& a_his, int steps);

// Ego-frame offsets (horizon x 2) to a world trajectory starting at `origin`
// (included). Headings follow successive differences.
Trajectory OffsetsToTrajectory(const Mat& offsets, const Waypoint& origin,
                               double dt = kStepSeconds);
Mat TrajectoryToOffsets(const Trajectory& traj, const Waypoint& origin, int horizon);

// ---------------------------------------------------------------------------
// Model.

struct LayerCaches {
  std::vector<Var> k;
  std::vector<Var> v;
  int length = 0;
  std::shared_ptr<Tape> owner;  // keeps the producing tape alive when set
};

struct HistoryEmbedding {
  Var anchors;  // horizon x 2, meters, ego frame
  Var query;    // n_queries x d_bridge
};

// Projected cache inputs of the bridging layers.
struct BridgeContext {
  std::vector<Var> k;
  std::vector<Var> v;
  BoolMat mask;  // n_queries x cache length
};

struct DecodeOptions {
  bool greedy = true;
  double temperature = 1.0;
  uint64_t seed = 0;
  // Tokens forced at the start of the sequence (e.g. a reasoning prefix).
  std::vector<int> forced_prefix;
  // Stop after ACTION_START (used for flow planning).
  bool stop_at_action_start = false;
};

struct DecodeResult {
  std::vector<int> tokens;  // without BOS
  double logprob = 0.0;     // sum over sampled tokens
  bool complete = false;
  LayerCaches caches;       // caches over context + BOS + tokens
};

class Policy {
 public:
  Policy(const PolicyConfig& config, uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }
  const ActionCodebook& codebook() const { return codebook_; }
  void set_codebook(ActionCodebook codebook);
  const std::vector<int>& sparse_layers() const { return sparse_layers_; }

  // Parameter groups (name prefixes).
  static constexpr const char* kBackbonePrefix = "backbone/";
  static constexpr const char* kHeadPrefix = "head/";
  static constexpr const char* kBridgePrefix = "bridge/";
  static constexpr const char* kHistoryPrefix = "history/";

  Var EmbedContext(Tape& tape, const ContextTokens& ctx) const;
  // Token embeddings with sinusoidal positions starting at `first_position`.
  Var EmbedTokens(Tape& tape, const std::vector<int>& ids, int first_position) const;
  Var EmbedTokens(Tape& tape, const std::vector<int>& ids,
                  const std::vector<int>& positions) const;
  // Runs all layers on new rows `x`; mask is rows x (caches.length + rows).
  // Appends the new keys/values to `caches`.
  Var Backbone(Tape& tape, Var x, const BoolMat& mask, LayerCaches& caches) const;
  Var Head(Tape& tape, Var hidden) const;

  // Context-only pass; one key/value pair per layer.
  LayerCaches EncodeContext(Tape& tape, const ContextTokens& ctx) const;
  // Context plus generated inputs (BOS first) under the prefix-LM mask.
  // Returns the hidden states of the generated rows.
  Var Prefill(Tape& tape, const ContextTokens& ctx, const std::vector<int>& inputs,
              LayerCaches& caches) const;

  // Teacher-forced logits for [BOS] + tokens[:-1] after the context;
  // row i scores tokens[i].
  Var SequenceLogits(Tape& tape, const ContextTokens& ctx, const std::vector<int>& tokens,
                     LayerCaches* caches_out = nullptr) const;
  BoolMat GrammarMask(const std::vector<int>& tokens) const;
  // Sum of grammar-masked token log-probabilities.
  Var SequenceLogProb(Tape& tape, const ContextTokens& ctx, const std::vector<int>& tokens) const;

  // Log-probabilities (rows x 1) of several sequences sharing one context,
  // evaluated in a single pass.
  Var GroupLogProbs(Tape& tape, const ContextTokens& ctx,
                    const std::vector<std::vector<int>>& sequences) const;

  DecodeResult Decode(const ContextTokens& ctx, const DecodeOptions& options) const;

  // Anchors and query features; Gaussian noise on the anchors when
  // noise_std > 0. With history_init off the anchors are zero.
  HistoryEmbedding EmbedHistory(Tape& tape, const Trajectory& history, double noise_std,
                                uint64_t seed) const;
  BridgeContext PrepareBridge(Tape& tape, const LayerCaches& caches,
                              const std::vector<bool>& valid) const;
  // Velocity (horizon x 2) at flow time tau.
  Var VectorFieldAt(Tape& tape, Var a_tau, double tau, Var query,
                    const BridgeContext& bridge) const;

  // Flow planning from given caches; returns ego-frame offsets or nullopt.
  std::optional<Mat> FlowSample(const LayerCaches& caches, const std::vector<bool>& valid,
                                const Trajectory& history, int steps) const;

  // Full planners returning a world-frame trajectory (start pose included).
  // Invalid plans come back empty.
  Trajectory PlanAutoregressive(const Scenario& scenario, const DecodeOptions& options,
                                DecodeResult* result = nullptr) const;
  Trajectory PlanFlow(const Scenario& scenario, int steps = -1,
                      std::vector<int>* reasoning = nullptr) const;

  // Cache validity flags for context + generated positions.
  static std::vector<bool> CacheValid(const ContextTokens& ctx, int generated);

 private:
  void CreateParams(uint64_t seed);
  Var Param(Tape& tape, const std::string& name) const { return tape.Param(params_, name); }

  PolicyConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
  ActionCodebook codebook_;
  std::vector<int> sparse_layers_;
};

Mat SinusoidalEmbedding(const std::vector<double>& positions, int dim, double max_period);

}  // namespace driveflow

#endif  // DRIVEFLOW_POLICY_H_
