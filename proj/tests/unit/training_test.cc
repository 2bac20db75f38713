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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "driveflow/random.h"
#include "driveflow/training.h"

namespace driveflow {
namespace {

PolicyConfig SmallConfig() {
  PolicyConfig c;
  c.d_model = 16;
  c.n_layers = 4;
  c.n_heads = 2;
  c.d_bridge = 8;
  c.n_queries = 5;
  c.codebook_size = 16;
  c.history_hidden = 8;
  return c;
}

std::vector<Scenario> Scenarios(int n, uint64_t base, Label label = Label::kPositive) {
  std::vector<Scenario> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(GenerateScenario(base + i, static_cast<Archetype>(i % kNumArchetypes), label));
  }
  return out;
}

Policy SmallPolicy(const PolicyConfig& config = SmallConfig(), uint64_t seed = 1) {
  Policy p(config, seed);
  EnsureCodebook(p, Scenarios(14, 500), 3);
  return p;
}

Trajectory Line(double y_offset, int n = 11, double step = 5.0) {
  Trajectory t;
  for (int i = 0; i < n; ++i) t.waypoints.push_back({i * step, y_offset, 0.0});
  return t;
}

// ---------------------------------------------------------------------------

TEST_CASE("lm_loss matches a hand-rolled cross-entropy oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 120; ++trial) {
    const int n = 2 + static_cast<int>(rng.Index(9));
    const int v = 3 + static_cast<int>(rng.Index(6));
    const int n_reason = static_cast<int>(rng.Index(n));
    Mat logits(n, v);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.Uniform(-4, 4);
    std::vector<int> targets(n);
    for (int& t : targets) t = static_cast<int>(rng.Index(v));
    double all = 0.0, act = 0.0;
    for (int i = 0; i < n; ++i) {
      double mx = logits.row(i).maxCoeff();
      double z = 0.0;
      for (int j = 0; j < v; ++j) z += std::exp(logits(i, j) - mx);
      const double nll = -(logits(i, targets[i]) - mx - std::log(z));
      all += nll;
      if (i >= n_reason) act += nll;
    }
    Tape tape;
    const LmLossVars l = LmLossFromLogits(tape.Constant(logits), targets, n_reason);
    CHECK(l.lm.value()(0, 0) == doctest::Approx(all / n).epsilon(1e-12));
    CHECK(l.action.value()(0, 0) == doctest::Approx(act / (n - n_reason)).epsilon(1e-12));
  }
}

TEST_CASE("lm_loss examples") {
  Tape tape;
  SUBCASE("uniform logits over four symbols give ln 4") {
    const LmLossVars l = LmLossFromLogits(tape.Constant(Mat::Zero(5, 4)), {0, 3, 1, 2, 2}, 2);
    CHECK(l.lm.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(l.action.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
  SUBCASE("perfect predictions give zero") {
    Mat logits = Mat::Constant(3, 6, -1e3);
    const std::vector<int> t = {4, 0, 5};
    for (int i = 0; i < 3; ++i) logits(i, t[i]) = 1e3;
    const LmLossVars l = LmLossFromLogits(tape.Constant(logits), t, 1);
    CHECK(l.lm.value()(0, 0) == doctest::Approx(0.0));
    CHECK(l.action.value()(0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("fast thinking makes both losses identical") {
    Mat logits(4, 5);
    logits << 1, 2, 3, 4, 5, 0, -1, 2, 0.5, 0, 3, 3, 3, 3, 1, -2, 0, 1, 2, 0;
    const LmLossVars l = LmLossFromLogits(tape.Constant(logits), {1, 2, 3, 4}, 0);
    CHECK(l.lm.value()(0, 0) == l.action.value()(0, 0));
  }
}

TEST_CASE("lm_loss rejects ungrammatical targets") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(3, Archetype::kLaneChange, Label::kPositive);
  const ContextTokens ctx = EncodeContextFeatures(s, p.config().max_context);
  Tape tape;
  CHECK_THROWS_AS(LmLoss(tape, p, ctx, {p.vocab().eos()}), std::invalid_argument);
  const std::vector<int> good =
      TargetSequence(p.vocab(), s.reasoning_tags, Tokenize(p.codebook(), s.reference));
  Tape tape2;
  const LmLossVars l = LmLoss(tape2, p, ctx, good);
  CHECK(std::isfinite(l.lm.value()(0, 0)));
}

TEST_CASE("fm_loss with a zero vector field equals the mean squared transport target") {
  PolicyConfig cfg = SmallConfig();
  cfg.noise_std = 0.0;
  Policy p = SmallPolicy(cfg);
  p.mutable_params().Mutable("bridge/out/w").setZero();
  p.mutable_params().Mutable("bridge/out/b").setZero();
  const auto data = Scenarios(7, 900);
  std::vector<FmExample> ex;
  for (const Scenario& s : data) ex.push_back(MakeFmExample(p, s));
  std::vector<const FmExample*> batch;
  for (const FmExample& e : ex) batch.push_back(&e);
  // Oracle: the anchor is the constant-velocity extrapolation of the last
  // history step and the target is the future in the current ego frame.
  double expected = 0.0;
  for (const Scenario& s : data) {
    const Waypoint origin = s.ego_history.waypoints.back();
    const Trajectory hist = ToLocalFrame(s.ego_history, origin);
    const Trajectory fut = ToLocalFrame(s.reference, origin);
    const Waypoint prev = hist.waypoints[hist.size() - 2];
    for (int k = 1; k <= kHorizonSteps; ++k) {
      const double ax = -k * prev.x, ay = -k * prev.y;
      const double dx = fut.waypoints[k].x - ax, dy = fut.waypoints[k].y - ay;
      expected += dx * dx + dy * dy;
    }
  }
  expected /= static_cast<double>(data.size());
  for (uint64_t seed : {1u, 2u, 3u}) {
    Tape tape;
    const double got = FmLoss(tape, p, batch, seed).value()(0, 0);
    CHECK(got == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("fm_loss gradients match finite differences") {
  Policy p = SmallPolicy();
  const auto data = Scenarios(2, 40);
  std::vector<FmExample> ex;
  for (const Scenario& s : data) ex.push_back(MakeFmExample(p, s));
  std::vector<const FmExample*> batch = {&ex[0], &ex[1]};
  std::vector<std::string> names;
  for (const std::string& n : p.params().Names()) {
    if (n.rfind("bridge/", 0) == 0 || n.rfind("history/", 0) == 0) names.push_back(n);
  }
  const GradCheckResult r = GradCheck(
      p.mutable_params(), names,
      [&](Tape& tape, const ParamStore&) { return FmLoss(tape, p, batch, 5); }, 1e-5, 1e-4, 3, 9);
  CHECK_MESSAGE(r.pass, r.worst_param << " " << r.worst_relative_error);
  CHECK(r.checked > 100);
}

// ---------------------------------------------------------------------------

TEST_CASE("avg_distance and reference_match examples") {
  CHECK(AvgDistance(Line(0), Line(0)) == 0.0);
  CHECK(AvgDistance(Line(1), Line(0)) == doctest::Approx(1.0).epsilon(1e-15));
  Trajectory a, b;
  for (int i = 0; i < 3; ++i) {
    a.waypoints.push_back({double(i), double(i), 0});
    b.waypoints.push_back({double(i), 0, 0});
  }
  CHECK(AvgDistance(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ReferenceMatch(Line(0), Line(0), 2.0) == 1.0);
  CHECK(ReferenceMatch(Line(1), Line(0), 2.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(ReferenceMatch(Line(2), Line(0), 2.0) == 0.0);
  CHECK(ReferenceMatch(Line(5), Line(0), 2.0) == 0.0);
}

TEST_CASE("reference_match is bounded and non-increasing in distance") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double delta = rng.Uniform(0.1, 5.0);
    const double d1 = rng.Uniform(0, 8), d2 = d1 + rng.Uniform(0, 3);
    const double m1 = ReferenceMatch(Line(d1), Line(0), delta);
    const double m2 = ReferenceMatch(Line(d2), Line(0), delta);
    CHECK(m1 >= 0.0);
    CHECK(m1 <= 1.0);
    CHECK(m2 <= m1);
    CHECK(m1 == doctest::Approx(std::clamp(1.0 - d1 / delta, 0.0, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("cot_penalty examples and monotonicity") {
  CHECK(CotPenalty(4, 4, 0.5) == 0.5);
  CHECK(CotPenalty(14, 4, 0.1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(CotPenalty(14, 4, 0.1) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(CotPenalty(0, 100, 1.0) < 1e-40);
  double prev = 0.0;
  for (int l = 0; l < 30; ++l) {
    const double v = CotPenalty(l, 6, 0.7);
    CHECK(v > prev);
    CHECK(v < 1.0);
    prev = v;
  }
}

TEST_CASE("alignment_check examples") {
  EgoState start;
  start.speed = 6.0;
  std::vector<Control> left(10, Control{0.0, (M_PI / 2) / 5.0});
  Trajectory turn = RolloutKinematic(start, left, 0.5);
  turn.waypoints.insert(turn.waypoints.begin(), Waypoint{0, 0, 0});
  CHECK(AlignmentCheck({Lateral::kLeftTurn}, turn));
  CHECK_FALSE(AlignmentCheck({Lateral::kStraight}, turn));
  CHECK(AlignmentCheck({}, turn));
  CHECK(AlignmentCheck({}, Line(0)));
  CHECK_FALSE(AlignmentCheck({Lateral::kLeftTurn, Lateral::kRightTurn}, turn));
}

TEST_CASE("total_reward examples") {
  RewardBreakdown r;
  r.r_driving = 0.9;
  r.r_cot = CotPenalty(4, 4, 0.5);
  r.lambda_c = 0.1;
  CHECK(r.Recompute() == doctest::Approx(0.85).epsilon(1e-14));
  RewardBreakdown n;
  n.r_driving = 0.6;
  n.r_negative = 1.0;
  n.w_n = 0.5;
  CHECK(n.Recompute() == doctest::Approx(0.10).epsilon(1e-14));

  const Policy p = SmallPolicy();
  RewardConfig cfg;
  for (Label label : {Label::kPositive, Label::kNegative, Label::kRecovery}) {
    const Scenario s = GenerateScenario(21, Archetype::kConstruction, label);
    Candidate c;
    c.traj = s.reference;
    const RewardBreakdown b = TotalReward(s, c, cfg);
    const double driving = Score(s.reference, s).pdms;
    CHECK(b.r_driving == driving);
    CHECK(b.r_cot == CotPenalty(0, cfg.l_tol, cfg.gamma));
    if (label == Label::kNegative) {
      CHECK(b.r_negative == 1.0);
      CHECK(b.total == doctest::Approx(driving - cfg.lambda_n - cfg.lambda_c * b.r_cot));
    } else if (label == Label::kRecovery) {
      CHECK(b.r_recovery == 1.0);
      CHECK(b.total == doctest::Approx(driving + cfg.lambda_r - cfg.lambda_c * b.r_cot));
    } else {
      CHECK(b.total == doctest::Approx(driving - cfg.lambda_c * b.r_cot));
    }
  }
  SUBCASE("alignment violation overrides the length penalty") {
    const Scenario s = GenerateScenario(5, Archetype::kLeadBraking, Label::kPositive);
    Candidate c;
    c.traj = s.reference;
    c.reasoning = {Lateral::kLeftTurn};
    const RewardBreakdown b = TotalReward(s, c, cfg);
    CHECK(b.alignment_violated);
    CHECK(b.r_cot == cfg.kappa_align);
  }
  SUBCASE("invalid plans earn no driving reward") {
    const Scenario s = GenerateScenario(5, Archetype::kVru, Label::kNegative);
    const RewardBreakdown b = TotalReward(s, Candidate{}, cfg);
    CHECK(b.r_driving == 0.0);
    CHECK(b.r_negative == 0.0);
  }
}

TEST_CASE("reward routing audit over sampled candidates") {
  const Policy p = SmallPolicy();
  RewardConfig cfg;
  int audited = 0;
  for (int i = 0; i < 36; ++i) {
    const Label label = static_cast<Label>(i % 3);
    const Scenario s = GenerateScenario(700 + i / 3, static_cast<Archetype>(i % kNumArchetypes), label);
    const ContextTokens ctx = EncodeContextFeatures(s, p.config().max_context);
    for (int k = 0; k < 3; ++k) {
      DecodeOptions o;
      o.greedy = false;
      o.seed = MixSeed(i, k);
      const Candidate c = MakeCandidate(p, s, p.Decode(ctx, o).tokens);
      const RewardBreakdown b = TotalReward(s, c, cfg);
      CHECK(b.total == doctest::Approx(b.Recompute()).epsilon(1e-15));
      CHECK((label == Label::kNegative ? b.w_n == cfg.lambda_n : b.w_n == 0.0));
      CHECK((label == Label::kRecovery ? b.w_r == cfg.lambda_r : b.w_r == 0.0));
      if (label != Label::kNegative) CHECK(b.r_negative == 0.0);
      if (label != Label::kRecovery) CHECK(b.r_recovery == 0.0);
      ++audited;
    }
  }
  CHECK(audited >= 100);
}

TEST_CASE("group_advantage examples") {
  const auto a = GroupAdvantage({0.2, 0.4, 0.6});
  CHECK(a[0] == doctest::Approx(-1.224744871391589).epsilon(1e-10));
  CHECK(std::abs(a[1]) < 1e-12);
  CHECK(a[2] == doctest::Approx(1.224744871391589).epsilon(1e-10));
  for (double v : GroupAdvantage({0.7, 0.7, 0.7, 0.7})) CHECK(v == 0.0);
  const auto two = GroupAdvantage({1.0, 3.0});
  CHECK(two[0] == doctest::Approx(-1.0));
  CHECK(two[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(GroupAdvantage({1.0}), std::invalid_argument);
}

TEST_CASE("group_advantage normalization, shift, scale and permutation properties") {
  Rng rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const int g = 2 + static_cast<int>(rng.Index(10));
    std::vector<double> r(g);
    for (double& x : r) x = rng.Uniform(-2, 2);
    const auto a = GroupAdvantage(r);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / g;
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::sqrt(var / g) == doctest::Approx(1.0).epsilon(1e-10));
    const double shift = rng.Uniform(-5, 5), scale = rng.Uniform(0.1, 10);
    std::vector<double> t(g);
    for (int i = 0; i < g; ++i) t[i] = scale * r[i] + shift;
    const auto at = GroupAdvantage(t);
    for (int i = 0; i < g; ++i) CHECK(at[i] == doctest::Approx(a[i]).epsilon(1e-9));
    std::vector<int> perm(g);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = g - 1; i > 0; --i) std::swap(perm[i], perm[rng.Index(i + 1)]);
    std::vector<double> rp(g);
    for (int i = 0; i < g; ++i) rp[i] = r[perm[i]];
    const auto ap = GroupAdvantage(rp);
    for (int i = 0; i < g; ++i) CHECK(ap[i] == doctest::Approx(a[perm[i]]).epsilon(1e-12));
  }
}

TEST_CASE("kl_term examples and non-negativity") {
  CHECK(KlTerm(-1.5, -1.5) == 0.0);
  CHECK(KlTerm(std::log(2.0), 0.0) == doctest::Approx(2.0 - std::log(2.0) - 1.0).epsilon(1e-14));
  CHECK(KlTerm(std::log(2.0), 0.0) == doctest::Approx(0.30685).epsilon(1e-5));
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.Uniform(-30, 0), b = rng.Uniform(-30, 0);
    const double k = KlTerm(a, b);
    CHECK(k >= 0.0);
    CHECK((k == 0.0) == (a == b));
    const double rho = std::exp(a - b);
    if (std::abs(a - b) < 20) CHECK(k == doctest::Approx(rho - std::log(rho) - 1.0).epsilon(1e-9));
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("stage 2 leaves encoder and token head bit-identical") {
  Policy p = SmallPolicy();
  const auto data = Scenarios(8, 60);
  SftConfig cfg;
  cfg.stage2_steps = 3;
  cfg.batch_size = 4;
  const ParamStore before = p.params();
  TrainSftStage2(p, data, cfg);
  int changed_flow = 0;
  for (const auto& [name, value] : before.params()) {
    const bool frozen = name.rfind("backbone/", 0) == 0 || name.rfind("head/", 0) == 0;
    if (frozen) {
      CHECK_MESSAGE(p.params().Get(name) == value, name);
    } else if (!(p.params().Get(name) == value)) {
      ++changed_flow;
    }
  }
  CHECK(changed_flow > 0);
}

TEST_CASE("stage 1 leaves the flow expert bit-identical and lowers the LM loss") {
  Policy p = SmallPolicy();
  const auto data = Scenarios(8, 80);
  SftConfig cfg;
  cfg.stage1_steps = 30;
  cfg.batch_size = 4;
  cfg.lr_stage1 = 3e-3;
  const ParamStore before = p.params();
  const SftResult r = TrainSftStage1(p, data, cfg);
  REQUIRE(r.stage1.size() == 30);
  for (const auto& [name, value] : before.params()) {
    if (name.rfind("bridge/", 0) == 0 || name.rfind("history/", 0) == 0) {
      CHECK_MESSAGE(p.params().Get(name) == value, name);
    }
  }
  const double first = (r.stage1[0].loss + r.stage1[1].loss + r.stage1[2].loss) / 3;
  const double last = (r.stage1[27].loss + r.stage1[28].loss + r.stage1[29].loss) / 3;
  CHECK(last < first);
}

TEST_CASE("SFT is deterministic given its seed") {
  const auto data = Scenarios(6, 300);
  SftConfig cfg;
  cfg.stage1_steps = 4;
  cfg.stage2_steps = 4;
  cfg.batch_size = 3;
  Policy a(SmallConfig(), 2), b(SmallConfig(), 2);
  const SftResult ra = TrainSft(a, data, cfg);
  const SftResult rb = TrainSft(b, data, cfg);
  CHECK(a.params() == b.params());
  CHECK(ra.fm_final == rb.fm_final);
}

TEST_CASE("supervised subset drops negatives") {
  std::vector<Scenario> data = Scenarios(3, 1, Label::kPositive);
  const auto neg = Scenarios(2, 1, Label::kNegative);
  const auto rec = Scenarios(2, 1, Label::kRecovery);
  data.insert(data.end(), neg.begin(), neg.end());
  data.insert(data.end(), rec.begin(), rec.end());
  const auto sub = SupervisedSubset(data);
  CHECK(sub.size() == 5);
  for (const Scenario& s : sub) CHECK(s.label != Label::kNegative);
}

TEST_CASE("GRPO freezes the flow expert and keeps ratios at one") {
  Policy p = SmallPolicy();
  const Policy ref = p;
  AdamState opt;
  RftConfig cfg;
  cfg.group_size = 4;
  cfg.lr = 1e-3;
  const RewardConfig reward;
  const ParamStore before = p.params();
  for (int step = 0; step < 4; ++step) {
    const Scenario q = GenerateScenario(40 + step, static_cast<Archetype>(step), Label::kPositive);
    const GroupLog g = GrpoStep(p, opt, ref, q, cfg, reward, MixSeed(9, step));
    for (double r : g.ratios) CHECK(std::abs(r - 1.0) <= 1e-6);
    CHECK(g.rewards.size() == 4);
  }
  bool token_changed = false;
  for (const auto& [name, value] : before.params()) {
    if (name.rfind("bridge/", 0) == 0 || name.rfind("history/", 0) == 0) {
      CHECK_MESSAGE(p.params().Get(name) == value, name);
    } else if (!(p.params().Get(name) == value)) {
      token_changed = true;
    }
  }
  CHECK(token_changed);
}

TEST_CASE("GRPO with beta 0 and a degenerate group leaves parameters unchanged") {
  Policy p = SmallPolicy();
  AdamState opt;
  RftConfig cfg;
  cfg.group_size = 4;
  cfg.beta = 0.0;
  // A saturated token head makes every candidate identical.
  p.mutable_params().Mutable("head/out/w").setZero();
  Mat& b = p.mutable_params().Mutable("head/out/b");
  b.setConstant(-50.0);
  b(0, 0) = 50.0;
  b(0, p.vocab().action_start()) = 50.0;
  b(0, p.vocab().eos()) = 50.0;
  const RewardConfig reward;
  const Scenario q = GenerateScenario(3, Archetype::kLaneBias, Label::kPositive);
  const Policy ref = p;
  const ParamStore before = p.params();
  const GroupLog g = GrpoStep(p, opt, ref, q, cfg, reward, 77);
  for (double a : g.advantages) CHECK(a == 0.0);
  CHECK(p.params() == before);
}

TEST_CASE("RFT raises group reward on a single-scenario toy task") {
  Policy p = SmallPolicy();
  const Scenario q = GenerateScenario(12, Archetype::kLaneChange, Label::kRecovery);
  RftConfig cfg;
  cfg.group_size = 6;
  cfg.lr = 3e-3;
  RewardConfig reward;
  reward.lambda_r = 1.0;
  std::vector<Scenario> stream(60, q);
  const RftResult r = RunRft(p, stream, 0, cfg, reward);
  REQUIRE(r.log.size() == 60);
  double best = -1e9;
  std::vector<double> best_so_far;
  for (const GroupLog& g : r.log) best_so_far.push_back(best = std::max(best, g.mean_reward));
  CHECK(std::is_sorted(best_so_far.begin(), best_so_far.end()));
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r.log[i].mean_reward;
    last += r.log[50 + i].mean_reward;
  }
  CHECK(last > first);
}

TEST_CASE("RFT with identical seeds is reproducible") {
  const auto stream = Scenarios(3, 90);
  RftConfig cfg;
  cfg.group_size = 3;
  Policy a = SmallPolicy(), b = SmallPolicy();
  const RftResult ra = RunRft(a, stream, 1, cfg, RewardConfig{});
  const RftResult rb = RunRft(b, stream, 1, cfg, RewardConfig{});
  CHECK(a.params() == b.params());
  REQUIRE(ra.log.size() == 3);
  CHECK(ra.log[0].phase == "warmup");
  CHECK(ra.log[1].phase == "mixed");
  for (size_t i = 0; i < 3; ++i) CHECK(ra.log[i].mean_reward == rb.log[i].mean_reward);
  CHECK_THROWS_AS(RunRft(a, {}, 0, cfg, RewardConfig{}), std::invalid_argument);
}

TEST_CASE("bench_latency reports medians over at least three repeats") {
  const Policy p = SmallPolicy();
  const auto sc = Scenarios(2, 1);
  CHECK_THROWS_AS(BenchLatency(p, sc, {10}, 2), std::invalid_argument);
  const auto rows = BenchLatency(p, sc, {10, 20}, 3);
  REQUIRE(rows.size() == 2);
  for (const LatencyRow& r : rows) {
    CHECK(r.ar_seconds.size() == 3);
    CHECK(r.ar_median == Median(r.ar_seconds));
    CHECK(r.flow_median > 0.0);
  }
  CHECK(Median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(Median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("enum names round-trip") {
  for (BenchmarkMode m : {BenchmarkMode::kPdms, BenchmarkMode::kEpdms}) {
    CHECK(ParseBenchmarkMode(ToString(m)) == m);
  }
  for (PlannerKind k : {PlannerKind::kAutoregressive, PlannerKind::kFlow}) {
    CHECK(ParsePlannerKind(ToString(k)) == k);
  }
  CHECK_THROWS_AS(ParsePlannerKind("diffusion"), std::invalid_argument);
}

}  // namespace
}  // namespace driveflow
