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
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "driveflow/policy.h"
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

std::vector<Scenario> Scenarios(int n, uint64_t base) {
  std::vector<Scenario> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(GenerateScenario(base + i, static_cast<Archetype>(i % kNumArchetypes), Label::kPositive));
  }
  return out;
}

std::vector<Motion> Motions(const std::vector<Scenario>& data) {
  std::vector<Motion> m;
  for (const Scenario& s : data) {
    auto x = ExtractMotions(s.reference);
    m.insert(m.end(), x.begin(), x.end());
  }
  return m;
}

Policy SmallPolicy(uint64_t seed = 1) {
  Policy p(SmallConfig(), seed);
  p.set_codebook(FitCodebook(Motions(Scenarios(14, 500)), p.config().codebook_size, 3));
  return p;
}

TEST_CASE("select_sparse_layers") {
  CHECK(SelectSparseLayers(8, 2) == std::vector<int>{1, 3, 5, 7});
  CHECK(SelectSparseLayers(8, 1) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(SelectSparseLayers(8, 4) == std::vector<int>{3, 7});
  CHECK(SelectSparseLayers(8, 3) == std::vector<int>{2, 5, 7});
  CHECK(SelectSparseLayers(8, 8) == std::vector<int>{7});
  CHECK_THROWS_AS(SelectSparseLayers(8, 0), std::invalid_argument);
  CHECK_THROWS_AS(SelectSparseLayers(8, 9), std::invalid_argument);
  for (int n = 1; n <= 12; ++n) {
    for (int k = 1; k <= n; ++k) {
      const auto idx = SelectSparseLayers(n, k);
      CHECK(idx.back() == n - 1);
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
  }
}

TEST_CASE("sample_tau") {
  Rng rng(11);
  std::vector<double> d0, d1;
  for (int i = 0; i < 100000; ++i) {
    d0.push_back(SampleTau(rng, 0.0));
    d1.push_back(SampleTau(rng, 1.0));
  }
  for (double t : d0) REQUIRE((t > 0.0 && t < 1.0));
  CHECK(Median(d0) > 0.49);
  CHECK(Median(d0) < 0.51);
  CHECK(Median(d1) > 0.72);
  CHECK(Median(d1) < 0.74);
  CHECK(SampleTau(uint64_t{4}, 0.0) == SampleTau(uint64_t{4}, 0.0));
}

TEST_CASE("fm_interpolate and the conditional path") {
  Rng rng(2);
  Mat a(10, 2), b(10, 2);
  for (int i = 0; i < 20; ++i) {
    a.data()[i] = rng.Uniform(-9, 9);
    b.data()[i] = rng.Uniform(-9, 9);
  }
  CHECK(FmInterpolate(a, b, 0.0) == b);
  CHECK(FmInterpolate(a, b, 1.0) == a);
  Mat two(1, 2), zero = Mat::Zero(1, 2);
  two << 2, 2;
  CHECK(FmInterpolate(two, zero, 0.5) == Mat::Constant(1, 2, 1.0));
  CHECK_THROWS_AS(FmInterpolate(a, two, 0.3), std::invalid_argument);
  for (int i = 0; i < 100; ++i) {
    const double t1 = rng.Uniform(), t2 = rng.Uniform();
    if (std::abs(t1 - t2) < 1e-3) continue;
    const Mat slope = (FmInterpolate(a, b, t2) - FmInterpolate(a, b, t1)) / (t2 - t1);
    CHECK((slope - (a - b)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("fm_sample integrates constant and affine fields") {
  Mat a_his(10, 2);
  for (int i = 0; i < 20; ++i) a_his.data()[i] = 0.3 * i - 2.0;
  Mat v_star = Mat::Constant(10, 2, 0.7);
  v_star(3, 1) = -1.5;
  for (int steps : {1, 2, 5, 9}) {
    auto out = FmIntegrate([&](const Mat&, double) { return v_star; }, a_his, steps);
    REQUIRE(out.has_value());
    CHECK(((*out) - (a_his + v_star)).cwiseAbs().maxCoeff() < 1e-12);
  }
  // da/dtau = -a has the closed-form endpoint a_his / e.
  auto err = [&](int steps) {
    auto out = FmIntegrate([](const Mat& a, double) { return Mat(-a); }, a_his, steps);
    return (*out - a_his * std::exp(-1.0)).cwiseAbs().maxCoeff();
  };
  for (int steps : {2, 5, 10, 20, 40}) CHECK(err(2 * steps) <= 0.5 * err(steps));
  auto bad = FmIntegrate([](const Mat& a, double) { return Mat(a * 1e308); }, a_his, 3);
  CHECK_FALSE(bad.has_value());
  CHECK_THROWS_AS(FmIntegrate([](const Mat& a, double) { return a; }, a_his, 0), std::invalid_argument);
}

TEST_CASE("codebook: zero motion, idempotence, rejection") {
  const auto data = Scenarios(70, 900);
  const ActionCodebook cb = FitCodebook(Motions(data), 64, 1);
  REQUIRE(cb.size() == 64);
  CHECK(cb.centroids[0] == Motion{0, 0, 0});
  Trajectory still;
  still.waypoints.assign(11, Waypoint{3, 4, 0.5});
  const auto tokens = Tokenize(cb, still);
  CHECK(tokens == std::vector<int>(10, 0));
  CHECK(Detokenize(cb, tokens, still.waypoints[0]) == still);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<int> t;
    for (int k = 0; k < 10; ++k) t.push_back(static_cast<int>(rng.Index(64)));
    const Waypoint start{rng.Uniform(-20, 20), rng.Uniform(-20, 20), rng.Uniform(-3, 3)};
    const Trajectory d = Detokenize(cb, t, start);
    CHECK(Detokenize(cb, Tokenize(cb, d), start) == d);
  }
  CHECK_THROWS_AS(FitCodebook({{1, 0, 0}, {2, 0, 0}}, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(Detokenize(cb, {64}, Waypoint{}), std::invalid_argument);
}

TEST_CASE("codebook: round-trip ADE at K = 256") {
  const auto train = Scenarios(280, 10000);
  const ActionCodebook cb = FitCodebook(Motions(train), 256, 7);
  const auto val = Scenarios(70, 20000);
  double total = 0.0;
  for (const Scenario& s : val) {
    const Trajectory r = Detokenize(cb, Tokenize(cb, s.reference), s.reference.waypoints[0]);
    total += AvgDistance(r, s.reference);
  }
  const double ade = total / val.size();
  MESSAGE("codebook round-trip ADE " << ade);
  CHECK(ade <= 0.5);
}

TEST_CASE("grammar") {
  Vocabulary v{16};
  const int h = 10, r = 4;
  std::vector<int> seq = TargetSequence(v, {Lateral::kChangeLeft}, std::vector<int>(10, 3));
  CHECK(IsGrammatical(v, seq, h, r));
  CHECK(seq.size() == 13);
  const auto parsed = ParseSequence(v, seq, h, r);
  CHECK(parsed.reasons == std::vector<Lateral>{Lateral::kChangeLeft});
  CHECK(parsed.actions == std::vector<int>(10, 3));
  const auto first = GrammarAllowed(v, {}, h, r);
  for (int i = 0; i < 16; ++i) CHECK_FALSE(first[i]);
  CHECK(first[v.action_start()]);
  CHECK_FALSE(first[v.eos()]);
  std::vector<int> bad = seq;
  bad.erase(bad.begin() + 5);
  CHECK_FALSE(IsGrammatical(v, bad, h, r));
  CHECK_THROWS_AS(ParseSequence(v, bad, h, r), std::invalid_argument);
  std::vector<int> too_many(5, v.reason(Lateral::kStraight));
  too_many.push_back(v.action_start());
  too_many.insert(too_many.end(), 10, 0);
  too_many.push_back(v.eos());
  CHECK_FALSE(IsGrammatical(v, too_many, h, r));
}

TEST_CASE("context encoding") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(3, Archetype::kStopSign, Label::kPositive);
  const ContextTokens ctx = EncodeContextFeatures(s, p.config().max_context);
  CHECK(ctx.features.cols() == kContextFeatures);
  CHECK(ctx.num_valid() == ctx.length());
  Tape t1(false), t2(false);
  const LayerCaches a = p.EncodeContext(t1, ctx);
  const LayerCaches b = p.EncodeContext(t2, ctx);
  REQUIRE(a.k.size() == static_cast<size_t>(p.config().n_layers));
  for (size_t l = 0; l < a.k.size(); ++l) {
    CHECK(a.k[l].value() == b.k[l].value());
    CHECK(a.v[l].value() == b.v[l].value());
    CHECK(a.k[l].rows() == ctx.length());
  }
  const ContextTokens padded = PadContext(ctx, ctx.length() + 5);
  Tape t3(false);
  const LayerCaches c = p.EncodeContext(t3, padded);
  for (size_t l = 0; l < a.k.size(); ++l) {
    const Mat dk = c.k[l].value().topRows(ctx.length()) - a.k[l].value();
    const Mat dv = c.v[l].value().topRows(ctx.length()) - a.v[l].value();
    CHECK(dk.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(dv.cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(EncodeContextFeatures(s, 3), std::invalid_argument);
}

TEST_CASE("history embedding") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(5, Archetype::kLaneBias, Label::kPositive);
  Tape t(false);
  const HistoryEmbedding a = p.EmbedHistory(t, s.ego_history, 0.0, 1);
  const HistoryEmbedding b = p.EmbedHistory(t, s.ego_history, 0.0, 2);
  CHECK(a.anchors.value() == b.anchors.value());
  CHECK(a.query.value() == b.query.value());
  CHECK(a.anchors.rows() == p.config().horizon);
  CHECK(a.query.rows() == p.config().n_queries);
  const HistoryEmbedding n1 = p.EmbedHistory(t, s.ego_history, 0.25, 9);
  const HistoryEmbedding n2 = p.EmbedHistory(t, s.ego_history, 0.25, 9);
  const HistoryEmbedding n3 = p.EmbedHistory(t, s.ego_history, 0.25, 10);
  CHECK(n1.anchors.value() == n2.anchors.value());
  CHECK_FALSE(n1.anchors.value() == n3.anchors.value());
  // Doubling the history speed doubles the initialized anchors.
  Trajectory fast = s.ego_history;
  const Vec2 end = fast.waypoints.back().position();
  for (Waypoint& w : fast.waypoints) {
    const Vec2 q = end + 2.0 * (w.position() - end);
    w.x = q.x;
    w.y = q.y;
  }
  const Mat slow_anchor = a.anchors.value();
  const Mat fast_anchor = p.EmbedHistory(t, fast, 0.0, 0).anchors.value();
  CHECK(fast_anchor.norm() == doctest::Approx(2.0 * slow_anchor.norm()).epsilon(1e-9));
  PolicyConfig off = SmallConfig();
  off.history_init = false;
  const Policy z(off, 1);
  CHECK(z.EmbedHistory(t, s.ego_history, 0.0, 0).anchors.value().isZero(0.0));
}

TEST_CASE("vector field") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(8, Archetype::kCutIn, Label::kPositive);
  const ContextTokens ctx = EncodeContextFeatures(s, p.config().max_context);
  Tape t(false);
  LayerCaches caches;
  p.Prefill(t, ctx, {p.vocab().bos(), p.vocab().action_start()}, caches);
  const std::vector<bool> valid = Policy::CacheValid(ctx, 2);
  const HistoryEmbedding emb = p.EmbedHistory(t, s.ego_history, 0.0, 0);
  const BridgeContext bridge = p.PrepareBridge(t, caches, valid);
  CHECK(bridge.k.size() == p.sparse_layers().size());
  Var a = t.Constant(Mat::Constant(p.config().horizon, 2, 0.4));
  const Mat v0 = p.VectorFieldAt(t, a, 0.0, emb.query, bridge).value();
  const Mat v0b = p.VectorFieldAt(t, a, 0.0, emb.query, bridge).value();
  const Mat v1 = p.VectorFieldAt(t, a, 1.0, emb.query, bridge).value();
  CHECK(v0 == v0b);
  CHECK((v0 - v1).cwiseAbs().maxCoeff() > 1e-6);
  CHECK(v0.rows() == p.config().horizon);
  CHECK(v0.cols() == 2);
  LayerCaches short_caches = caches;
  short_caches.k.pop_back();
  CHECK_THROWS_AS(p.PrepareBridge(t, short_caches, valid), std::invalid_argument);
  CHECK_THROWS_AS(p.VectorFieldAt(t, t.Constant(Mat::Zero(3, 2)), 0.5, emb.query, bridge),
                  std::invalid_argument);
  const auto f1 = p.FlowSample(caches, valid, s.ego_history, 5);
  const auto f2 = p.FlowSample(caches, valid, s.ego_history, 5);
  REQUIRE(f1.has_value());
  CHECK(*f1 == *f2);
}

TEST_CASE("token head: masking, log-probabilities and decoding") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(2, Archetype::kVru, Label::kPositive);
  const ContextTokens ctx = EncodeContextFeatures(s, p.config().max_context);
  const std::vector<int> seq =
      TargetSequence(p.vocab(), s.reasoning_tags, Tokenize(p.codebook(), s.reference));
  {
    Tape t;
    Var logits = p.SequenceLogits(t, ctx, seq);
    const BoolMat mask = p.GrammarMask(seq);
    const Mat probs = Softmax(logits, &mask).value();
    const int n_reason = static_cast<int>(s.reasoning_tags.size());
    for (int i = 0; i <= n_reason; ++i) {
      for (int j = 0; j < p.vocab().codebook_size; ++j) CHECK(probs(i, j) == 0.0);
    }
  }
  {
    Tape t;
    Var logits = t.Constant(Mat::Constant(1, p.vocab().size(), 0.3));
    const LmLossVars l = LmLossFromLogits(logits, {p.vocab().eos()}, 0);
    CHECK(-l.lm.value()(0, 0) == doctest::Approx(-std::log(p.vocab().size())).epsilon(1e-14));
  }
  Tape t1(false);
  const double lp = p.SequenceLogProb(t1, ctx, seq).value()(0, 0);
  Tape t2(false);
  const Mat group = p.GroupLogProbs(t2, ctx, {seq, seq}).value();
  CHECK(group(0, 0) == doctest::Approx(lp).epsilon(1e-10));
  CHECK(group(1, 0) == doctest::Approx(lp).epsilon(1e-10));
  const DecodeResult g1 = p.Decode(ctx, DecodeOptions{});
  const DecodeResult g2 = p.Decode(ctx, DecodeOptions{});
  CHECK(g1.tokens == g2.tokens);
  CHECK(g1.complete);
  DecodeOptions sample;
  sample.greedy = false;
  sample.seed = 77;
  const DecodeResult s1 = p.Decode(ctx, sample);
  const DecodeResult s2 = p.Decode(ctx, sample);
  CHECK(s1.tokens == s2.tokens);
  CHECK(s1.logprob == s2.logprob);
  Tape t3(false);
  CHECK(p.SequenceLogProb(t3, ctx, s1.tokens).value()(0, 0) == doctest::Approx(s1.logprob).epsilon(1e-9));
  DecodeOptions forced;
  forced.forced_prefix = {p.vocab().reason(Lateral::kLeftTurn)};
  CHECK(p.Decode(ctx, forced).tokens.front() == forced.forced_prefix.front());
  forced.forced_prefix = {0};
  CHECK_THROWS_AS(p.Decode(ctx, forced), std::invalid_argument);
}

TEST_CASE("grammar invariant over sampled decodes") {
  const Policy p = SmallPolicy(4);
  const auto data = Scenarios(10, 300);
  for (int i = 0; i < 120; ++i) {
    const Scenario& s = data[i % data.size()];
    DecodeOptions o;
    o.greedy = false;
    o.temperature = 0.5 + (i % 4) * 0.5;
    o.seed = i;
    const DecodeResult r = p.Decode(EncodeContextFeatures(s, p.config().max_context), o);
    REQUIRE(r.complete);
    CHECK(IsGrammatical(p.vocab(), r.tokens, p.config().horizon, p.config().max_reason));
    CHECK(std::count(r.tokens.begin(), r.tokens.end(), p.vocab().action_start()) == 1);
    CHECK(ParseSequence(p.vocab(), r.tokens, 10, 4).actions.size() == 10);
  }
}

TEST_CASE("planners return full-horizon world-frame trajectories") {
  const Policy p = SmallPolicy();
  const Scenario s = GenerateScenario(6, Archetype::kLeadBraking, Label::kPositive);
  const Trajectory ar = p.PlanAutoregressive(s, DecodeOptions{});
  const Trajectory fl = p.PlanFlow(s);
  CHECK(ar.size() == kHorizonSteps + 1);
  CHECK(fl.size() == kHorizonSteps + 1);
  CHECK(ar.waypoints[0] == CurrentPose(s));
  CHECK(fl.waypoints[0] == CurrentPose(s));
  const Mat off = TrajectoryToOffsets(fl, CurrentPose(s), kHorizonSteps);
  const Trajectory back = OffsetsToTrajectory(off, CurrentPose(s));
  for (size_t i = 0; i < fl.size(); ++i) {
    CHECK(Norm(back.waypoints[i].position() - fl.waypoints[i].position()) < 1e-9);
  }
}

TEST_CASE("config validation") {
  PolicyConfig c = SmallConfig();
  c.n_queries = 3;
  CHECK_THROWS_AS(Policy(c, 1), std::invalid_argument);
  c = SmallConfig();
  c.sparse_interval = 9;
  CHECK_THROWS_AS(Policy(c, 1), std::invalid_argument);
  Policy p(SmallConfig(), 1);
  CHECK_THROWS_AS(p.set_codebook(ActionCodebook{}), std::invalid_argument);
}

}  // namespace
}  // namespace driveflow
