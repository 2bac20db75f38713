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

#include "driveflow/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace driveflow {
namespace {

constexpr uint64_t kFmEvalSeed = 0x5eed;

bool GradientsFinite(const Gradients& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

// Cycles through a seed-shuffled permutation of [0, n).
class BatchSampler {
 public:
  BatchSampler(size_t n, uint64_t seed) : rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), 0);
    Shuffle();
  }

  std::vector<size_t> Next(int batch) {
    std::vector<size_t> out;
    for (int i = 0; i < batch; ++i) {
      if (pos_ == order_.size()) Shuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void Shuffle() {
    for (size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.Index(i)]);
    pos_ = 0;
  }

  Rng rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

void CheckTrainable(const Policy& policy, const std::vector<Scenario>& data) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (policy.config().horizon != kHorizonSteps) {
    throw std::invalid_argument("training requires horizon " + std::to_string(kHorizonSteps));
  }
}

}  // namespace

std::string_view ToString(BenchmarkMode mode) {
  return mode == BenchmarkMode::kPdms ? "pdms" : "epdms";
}

BenchmarkMode ParseBenchmarkMode(std::string_view s) {
  if (s == "pdms") return BenchmarkMode::kPdms;
  if (s == "epdms") return BenchmarkMode::kEpdms;
  throw std::invalid_argument("unknown benchmark mode '" + std::string(s) + "'");
}

std::string_view ToString(PlannerKind kind) {
  return kind == PlannerKind::kAutoregressive ? "ar" : "flow";
}

PlannerKind ParsePlannerKind(std::string_view s) {
  if (s == "ar") return PlannerKind::kAutoregressive;
  if (s == "flow") return PlannerKind::kFlow;
  throw std::invalid_argument("unknown planner '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Losses.

LmLossVars LmLossFromLogits(Var logits, const std::vector<int>& targets, int n_reason,
                            const BoolMat* mask) {
  const int n = static_cast<int>(targets.size());
  if (n == 0 || logits.rows() != n) throw std::invalid_argument("lm_loss: logits/targets mismatch");
  if (n_reason < 0 || n_reason >= n) throw std::invalid_argument("lm_loss: bad reasoning length");
  Var picked = PickRows(LogSoftmax(logits, mask), targets);
  LmLossVars out;
  out.lm = Scale(Sum(picked), -1.0 / n);
  out.action = Scale(Sum(SliceRows(picked, n_reason, n - n_reason)), -1.0 / (n - n_reason));
  return out;
}

LmLossVars LmLoss(Tape& tape, const Policy& policy, const ContextTokens& ctx,
                  const std::vector<int>& targets) {
  const Vocabulary& vocab = policy.vocab();
  if (!IsGrammatical(vocab, targets, policy.config().horizon, policy.config().max_reason)) {
    throw std::invalid_argument("lm_loss: target violates the output grammar");
  }
  int n_reason = 0;
  while (vocab.is_reason(targets[n_reason])) ++n_reason;
  const BoolMat mask = policy.GrammarMask(targets);
  return LmLossFromLogits(policy.SequenceLogits(tape, ctx, targets), targets, n_reason, &mask);
}

FmExample MakeFmExample(const Policy& policy, const Scenario& scenario) {
  const PolicyConfig& c = policy.config();
  const ContextTokens ctx = EncodeContextFeatures(scenario, c.max_context);
  std::vector<int> inputs{policy.vocab().bos()};
  for (Lateral l : scenario.reasoning_tags) inputs.push_back(policy.vocab().reason(l));
  inputs.push_back(policy.vocab().action_start());
  auto owner = std::make_shared<Tape>(false);
  FmExample ex;
  policy.Prefill(*owner, ctx, inputs, ex.caches);
  ex.caches.owner = owner;
  ex.valid = Policy::CacheValid(ctx, static_cast<int>(inputs.size()));
  ex.history = scenario.ego_history;
  ex.target = TrajectoryToOffsets(scenario.reference, CurrentPose(scenario), c.horizon);
  return ex;
}

Var FmLossTerm(Var prediction, Var target) { return Sum(Square(Sub(prediction, target))); }

Var FmLoss(Tape& tape, const Policy& policy, const std::vector<const FmExample*>& batch,
           uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("fm_loss: empty batch");
  const PolicyConfig& c = policy.config();
  std::vector<Var> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    const FmExample& ex = *batch[i];
    Rng rng(MixSeed(seed, i));
    const double tau = SampleTau(rng, c.tau_shift);
    const HistoryEmbedding emb = policy.EmbedHistory(tape, ex.history, c.noise_std, rng.Next());
    const BridgeContext bridge = policy.PrepareBridge(tape, ex.caches, ex.valid);
    Var a = tape.Constant(ex.target, "target");
    Var a_tau = Add(Scale(a, tau), Scale(emb.anchors, 1.0 - tau));
    Var v = policy.VectorFieldAt(tape, a_tau, tau, emb.query, bridge);
    terms.push_back(FmLossTerm(v, Sub(a, emb.anchors)));
  }
  Var total = terms.size() == 1 ? terms[0] : Sum(ConcatRows(terms));
  return Scale(total, 1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Reward shaping.

double AvgDistance(const Trajectory& traj, const Trajectory& reference) {
  const size_t n = std::min(traj.size(), reference.size());
  if (n == 0) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum += Norm(traj.waypoints[i].position() - reference.waypoints[i].position());
  }
  return sum / static_cast<double>(n);
}

double ReferenceMatch(const Trajectory& traj, const Trajectory& reference, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("reference_match: delta must be positive");
  const double d = AvgDistance(traj, reference);
  if (!std::isfinite(d)) return 0.0;
  return std::clamp(1.0 - d / delta, 0.0, 1.0);
}

double CotPenalty(double length, double l_tol, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("cot_penalty: gamma must be positive");
  return 1.0 / (1.0 + std::exp(-(length - l_tol) * gamma));
}

bool AlignmentCheck(const std::vector<Lateral>& reasoning, const Trajectory& traj,
                    const ManeuverThresholds& thresholds) {
  if (reasoning.empty()) return true;
  for (Lateral l : reasoning) {
    if (l != reasoning.front()) return false;
  }
  if (traj.size() < 2) throw std::invalid_argument("alignment_check: trajectory too short");
  return ClassifyManeuver(traj, thresholds).lateral == reasoning.front();
}

Candidate MakeCandidate(const Policy& policy, const Scenario& scenario,
                        const std::vector<int>& tokens) {
  Candidate c;
  c.tokens = tokens;
  const PolicyConfig& cfg = policy.config();
  if (!IsGrammatical(policy.vocab(), tokens, cfg.horizon, cfg.max_reason)) return c;
  const ParsedSequence parsed = ParseSequence(policy.vocab(), tokens, cfg.horizon, cfg.max_reason);
  c.reasoning = parsed.reasons;
  c.traj = Detokenize(policy.codebook(), parsed.actions, CurrentPose(scenario));
  return c;
}

RewardBreakdown TotalReward(const Scenario& scenario, const Candidate& candidate,
                            const RewardConfig& config) {
  RewardBreakdown r;
  r.lambda_c = config.lambda_c;
  const bool valid = candidate.traj.size() >= 2 && candidate.traj.AllFinite();
  if (valid) {
    const ScoreReport report = Score(candidate.traj, scenario, nullptr, config.metrics);
    r.r_driving = config.mode == BenchmarkMode::kPdms ? report.pdms : report.epdms;
  }
  if (scenario.label == Label::kNegative) {
    r.w_n = config.lambda_n;
    r.r_negative = valid ? ReferenceMatch(candidate.traj, scenario.reference, config.delta) : 0.0;
  } else if (scenario.label == Label::kRecovery) {
    r.w_r = config.lambda_r;
    r.r_recovery = valid ? ReferenceMatch(candidate.traj, scenario.reference, config.delta) : 0.0;
  }
  r.alignment_violated = valid && !AlignmentCheck(candidate.reasoning, candidate.traj);
  r.r_cot = r.alignment_violated
                ? config.kappa_align
                : CotPenalty(static_cast<double>(candidate.reasoning.size()), config.l_tol,
                             config.gamma);
  r.total = r.Recompute();
  return r;
}

std::vector<double> GroupAdvantage(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantage: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < 1e-8) return out;
  for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

double KlTerm(double logp_ref, double logp_current) {
  const double d = logp_ref - logp_current;
  // expm1 keeps the result exactly zero at d = 0 and accurate near it.
  return std::max(0.0, std::expm1(d) - d);
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning.

std::vector<Scenario> SupervisedSubset(const std::vector<Scenario>& data) {
  std::vector<Scenario> out;
  for (const Scenario& s : data) {
    if (s.label != Label::kNegative) out.push_back(s);
  }
  return out;
}

void EnsureCodebook(Policy& policy, const std::vector<Scenario>& data, uint64_t seed) {
  if (policy.codebook().size() == policy.config().codebook_size) return;
  std::vector<Motion> motions;
  for (const Scenario& s : data) {
    if (s.label == Label::kNegative) continue;
    const std::vector<Motion> m = ExtractMotions(s.reference);
    motions.insert(motions.end(), m.begin(), m.end());
  }
  policy.set_codebook(FitCodebook(motions, policy.config().codebook_size, seed));
}

SftResult TrainSftStage1(Policy& policy, const std::vector<Scenario>& data,
                         const SftConfig& config, const LossLogger& log) {
  const std::vector<Scenario> train = SupervisedSubset(data);
  CheckTrainable(policy, train);
  EnsureCodebook(policy, train, config.seed);
  std::vector<ContextTokens> ctx;
  std::vector<std::vector<int>> targets;
  for (const Scenario& s : train) {
    ctx.push_back(EncodeContextFeatures(s, policy.config().max_context));
    targets.push_back(TargetSequence(policy.vocab(), s.reasoning_tags,
                                     Tokenize(policy.codebook(), s.reference)));
  }
  SftResult result;
  AdamState opt;
  BatchSampler sampler(train.size(), MixSeed(config.seed, 1));
  for (int step = 0; step < config.stage1_steps; ++step) {
    Tape tape;
    tape.FreezePrefix(Policy::kBridgePrefix);
    tape.FreezePrefix(Policy::kHistoryPrefix);
    std::vector<Var> lm, act;
    for (size_t i : sampler.Next(config.batch_size)) {
      const LmLossVars l = LmLoss(tape, policy, ctx[i], targets[i]);
      lm.push_back(l.lm);
      act.push_back(l.action);
    }
    Var loss = Scale(Sum(ConcatRows(lm)), 1.0 / lm.size());
    const double action = Sum(ConcatRows(act)).value()(0, 0) / act.size();
    const double value = loss.value()(0, 0);
    Gradients grads = tape.Backward(loss);
    if (!std::isfinite(value) || !GradientsFinite(grads)) {
      result.diverged = true;
      result.message = "non-finite stage-1 loss at step " + std::to_string(step);
      return result;
    }
    ClipGradNorm(grads, config.grad_clip);
    AdamStep(policy.mutable_params(), grads, opt, AdamConfig{config.lr_stage1});
    LossPoint p{"stage1", step, value, action};
    result.stage1.push_back(p);
    if (log) log(p);
  }
  return result;
}

SftResult TrainSftStage2(Policy& policy, const std::vector<Scenario>& data,
                         const SftConfig& config, const LossLogger& log) {
  const std::vector<Scenario> train = SupervisedSubset(data);
  CheckTrainable(policy, train);
  std::vector<FmExample> examples;
  for (const Scenario& s : train) examples.push_back(MakeFmExample(policy, s));
  std::vector<const FmExample*> all;
  for (const FmExample& e : examples) all.push_back(&e);
  auto full_loss = [&] {
    Tape tape(false);
    return FmLoss(tape, policy, all, kFmEvalSeed).value()(0, 0);
  };
  SftResult result;
  result.fm_initial = full_loss();
  AdamState opt;
  BatchSampler sampler(train.size(), MixSeed(config.seed, 2));
  for (int step = 0; step < config.stage2_steps; ++step) {
    Tape tape;
    tape.FreezePrefix(Policy::kBackbonePrefix);
    tape.FreezePrefix(Policy::kHeadPrefix);
    std::vector<const FmExample*> batch;
    for (size_t i : sampler.Next(config.batch_size)) batch.push_back(&examples[i]);
    Var loss = FmLoss(tape, policy, batch, MixSeed(config.seed, 1000 + step));
    const double value = loss.value()(0, 0);
    Gradients grads = tape.Backward(loss);
    if (!std::isfinite(value) || !GradientsFinite(grads)) {
      result.diverged = true;
      result.message = "non-finite stage-2 loss at step " + std::to_string(step);
      break;
    }
    ClipGradNorm(grads, config.grad_clip);
    AdamStep(policy.mutable_params(), grads, opt, AdamConfig{config.lr_stage2});
    LossPoint p{"stage2", step, value, 0.0};
    result.stage2.push_back(p);
    if (log) log(p);
  }
  result.fm_final = full_loss();
  return result;
}

SftResult TrainSft(Policy& policy, const std::vector<Scenario>& data, const SftConfig& config,
                   const LossLogger& log) {
  SftResult r1 = TrainSftStage1(policy, data, config, log);
  if (r1.diverged) return r1;
  SftResult r2 = TrainSftStage2(policy, data, config, log);
  r2.stage1 = std::move(r1.stage1);
  return r2;
}

// ---------------------------------------------------------------------------
// Reinforcement fine-tuning.

namespace {

// Negated mean clipped surrogate with the KL penalty, as a function of the
// current sequence log-probabilities.
Var GrpoLoss(Var logp, const std::vector<double>& old_logp, const std::vector<double>& ref_logp,
             const std::vector<double>& adv, double eps, double beta, double* objective) {
  const Mat& lp = logp.value();
  const int g = static_cast<int>(lp.rows());
  Mat dloss(g, 1);
  double total = 0.0;
  for (int i = 0; i < g; ++i) {
    const double rho = std::exp(lp(i, 0) - old_logp[i]);
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    const double unclipped_term = rho * adv[i];
    const double clipped_term = clipped * adv[i];
    const bool use_unclipped = (rho >= 1.0 - eps && rho <= 1.0 + eps) || unclipped_term < clipped_term;
    const double surrogate = std::min(unclipped_term, clipped_term);
    const double d = ref_logp[i] - lp(i, 0);
    total += surrogate - beta * KlTerm(ref_logp[i], lp(i, 0));
    const double dj = (use_unclipped ? unclipped_term : 0.0) - beta * (1.0 - std::exp(d));
    dloss(i, 0) = -dj / g;
  }
  *objective = total / g;
  Mat out(1, 1);
  out(0, 0) = -total / g;
  return logp.tape->Push(std::move(out), {logp},
                         [dloss](const Mat&, const Mat& grad, const std::vector<Mat*>& pg) {
                           if (pg[0]) *pg[0] += grad(0, 0) * dloss;
                         },
                         "grpo_loss");
}

}  // namespace

GroupLog GrpoStep(Policy& policy, AdamState& optimizer, const Policy& reference,
                  const Scenario& q, const RftConfig& config, const RewardConfig& reward,
                  uint64_t step_seed) {
  if (config.group_size < 2) throw std::invalid_argument("grpo: group size must be >= 2");
  GroupLog log;
  log.scenario_id = q.id;
  log.label = q.label;
  const ContextTokens ctx = EncodeContextFeatures(q, policy.config().max_context);
  std::vector<std::vector<int>> seqs;
  std::vector<double> sample_logp;
  std::vector<double> rewards;
  for (int i = 0; i < config.group_size; ++i) {
    DecodeOptions opts;
    opts.greedy = false;
    opts.temperature = config.temperature;
    opts.seed = MixSeed(step_seed, i);
    DecodeResult r = policy.Decode(ctx, opts);
    if (!r.complete) continue;
    const Candidate cand = MakeCandidate(policy, q, r.tokens);
    const RewardBreakdown rb = TotalReward(q, cand, reward);
    log.rewards.push_back(rb);
    rewards.push_back(rb.total);
    seqs.push_back(std::move(r.tokens));
    sample_logp.push_back(r.logprob);
  }
  if (seqs.size() < 2) {
    log.skipped = true;
    return log;
  }
  const double n = static_cast<double>(rewards.size());
  log.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - log.mean_reward) * (r - log.mean_reward);
  log.std_reward = std::sqrt(var / n);
  log.advantages = GroupAdvantage(rewards);

  Tape tape;
  tape.FreezePrefix(Policy::kBridgePrefix);
  tape.FreezePrefix(Policy::kHistoryPrefix);
  Var logp = policy.GroupLogProbs(tape, ctx, seqs);
  std::vector<double> ref_logp(seqs.size()), old_logp(seqs.size());
  {
    Tape ref_tape(false);
    const Mat ref = reference.GroupLogProbs(ref_tape, ctx, seqs).value();
    for (size_t i = 0; i < seqs.size(); ++i) ref_logp[i] = ref(i, 0);
  }
  for (size_t i = 0; i < seqs.size(); ++i) {
    // The sampling policy is the current one, so the ratio is one.
    old_logp[i] = config.temperature == 1.0 ? sample_logp[i] : logp.value()(i, 0);
    const double rho = std::exp(logp.value()(i, 0) - old_logp[i]);
    if (std::abs(rho - 1.0) > 1e-6) {
      throw std::logic_error("grpo: ratio " + std::to_string(rho) + " at the sampling point");
    }
    log.ratios.push_back(rho);
  }
  Var loss = GrpoLoss(logp, old_logp, ref_logp, log.advantages, config.eps_clip, config.beta,
                      &log.objective);
  Gradients grads = tape.Backward(loss);
  if (!GradientsFinite(grads)) {
    log.skipped = true;
    return log;
  }
  if (GradNorm(grads) > 0.0) {
    ClipGradNorm(grads, config.grad_clip);
    AdamStep(policy.mutable_params(), grads, optimizer, AdamConfig{config.lr});
  }
  return log;
}

RftResult RunRft(Policy& policy, const std::vector<Scenario>& stream, int warmup_count,
                 const RftConfig& config, const RewardConfig& reward, const GroupLogger& log) {
  if (stream.empty()) throw std::invalid_argument("run_rft: empty sample stream");
  if (policy.codebook().size() != policy.config().codebook_size) {
    throw std::invalid_argument("run_rft: policy has no codebook");
  }
  const Policy reference = policy;
  AdamState opt;
  RftResult result;
  for (size_t step = 0; step < stream.size(); ++step) {
    GroupLog g = GrpoStep(policy, opt, reference, stream[step], config, reward,
                          MixSeed(config.seed, step));
    g.step = static_cast<int>(step);
    g.phase = static_cast<int>(step) < warmup_count ? "warmup" : "mixed";
    if (g.skipped) ++result.skipped;
    if (log) log(g);
    result.log.push_back(std::move(g));
  }
  result.optimizer = std::move(opt);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation.

Trajectory Plan(const Policy& policy, const Scenario& scenario, PlannerKind kind,
                int flow_steps) {
  if (kind == PlannerKind::kFlow) return policy.PlanFlow(scenario, flow_steps);
  return policy.PlanAutoregressive(scenario, DecodeOptions{});
}

std::vector<EvalRow> Evaluate(const Policy& policy, const std::vector<Scenario>& scenarios,
                              PlannerKind kind, const MetricsConfig& metrics, int flow_steps) {
  std::vector<EvalRow> rows;
  for (const Scenario& s : scenarios) {
    EvalRow row;
    row.scenario_id = s.id;
    row.label = s.label;
    row.archetype = s.archetype;
    row.plan = Plan(policy, s, kind, flow_steps);
    row.report = Score(row.plan, s, nullptr, metrics);
    row.ade = AvgDistance(row.plan, s.reference);
    rows.push_back(std::move(row));
  }
  return rows;
}

double MeanPdms(const std::vector<EvalRow>& rows) {
  double sum = 0.0;
  for (const EvalRow& r : rows) sum += r.report.pdms;
  return rows.empty() ? 0.0 : sum / rows.size();
}

double MeanEpdms(const std::vector<EvalRow>& rows) {
  double sum = 0.0;
  for (const EvalRow& r : rows) sum += r.report.epdms;
  return rows.empty() ? 0.0 : sum / rows.size();
}

double MeanAde(const std::vector<EvalRow>& rows) {
  double sum = 0.0;
  for (const EvalRow& r : rows) sum += r.ade;
  return rows.empty() ? 0.0 : sum / rows.size();
}

// ---------------------------------------------------------------------------
// Latency.

double Median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<LatencyRow> BenchLatency(const Policy& trained, const std::vector<Scenario>& scenarios,
                                     const std::vector<int>& waypoint_counts, int repeats,
                                     int flow_steps) {
  if (repeats < 3) throw std::invalid_argument("bench_latency: repeats must be >= 3");
  if (scenarios.empty()) throw std::invalid_argument("bench_latency: no scenarios");
  using Clock = std::chrono::steady_clock;
  std::vector<LatencyRow> rows;
  for (int w : waypoint_counts) {
    PolicyConfig cfg = trained.config();
    cfg.horizon = w;
    Policy model(cfg, trained.params().seed());
    for (const auto& [name, value] : trained.params().params()) {
      if (model.params().Has(name) && model.params().Get(name).rows() == value.rows() &&
          model.params().Get(name).cols() == value.cols()) {
        model.mutable_params().Set(name, value);
      }
    }
    model.set_codebook(trained.codebook());
    LatencyRow row;
    row.waypoints = w;
    DecodeOptions opts;
    for (int r = 0; r < repeats; ++r) {
      const Scenario& s = scenarios[r % scenarios.size()];
      auto t0 = Clock::now();
      model.PlanAutoregressive(s, opts);
      auto t1 = Clock::now();
      model.PlanFlow(s, flow_steps);
      auto t2 = Clock::now();
      row.ar_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      row.flow_seconds.push_back(std::chrono::duration<double>(t2 - t1).count());
    }
    row.ar_median = Median(row.ar_seconds);
    row.flow_median = Median(row.flow_seconds);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace driveflow
