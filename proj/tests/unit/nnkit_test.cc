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

#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "driveflow/nnkit.h"

namespace driveflow {
namespace {

Mat M(int r, int c, std::initializer_list<double> v) {
  Mat m(r, c);
  int i = 0;
  for (double x : v) m.data()[i++] = x;
  return m;
}

ParamStore Store(uint64_t seed) {
  ParamStore p(seed);
  p.Create("x", 5, 8);
  p.Create("w", 8, 8);
  p.Create("b", 1, 8);
  p.Create("g", 1, 8);
  p.Create("k", 4, 8);
  p.Create("v", 4, 8);
  p.Create("gate", 8, 6);
  p.Create("up", 8, 6);
  p.Create("down", 6, 8);
  p.Create("table", 7, 8);
  p.Create("w2", 8, 3);
  return p;
}

// 16 draws of 4 parameter initializations = 64 random draws per layer.
void CheckLayer(const std::vector<std::string>& names, const LossFn& loss) {
  for (uint64_t draw = 0; draw < 4; ++draw) {
    ParamStore p = Store(100 + draw);
    const GradCheckResult r = GradCheck(p, names, loss, 1e-5, 1e-4, 16, draw);
    INFO("worst " << r.worst_relative_error << " in " << r.worst_param);
    CHECK(r.pass);
    CHECK(r.checked >= 16);
  }
}

// A fixed random projection keeps the losses non-symmetric.
Var Project(Tape& t, Var y) {
  Mat proj(y.rows(), y.cols());
  Rng rng(9);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = rng.Uniform(-1, 1);
  return Sum(Mul(y, t.Constant(proj)));
}

TEST_CASE("forward examples") {
  Tape t;
  Var x = t.Constant(M(2, 3, {1, 2, 3, 4, 5, 6}));
  Var y = Affine(x, t.Constant(Mat::Identity(3, 3)), t.Constant(Mat::Zero(1, 3)));
  CHECK(y.value() == x.value());
  Var s = Softmax(t.Constant(Mat::Constant(1, 4, 0.7)));
  for (int i = 0; i < 4; ++i) CHECK(s.value()(0, i) == doctest::Approx(0.25).epsilon(1e-15));
  Var q = t.Constant(M(3, 4, {1, -2, 3, 0.5, 9, 9, -1, 2, 0, 0, 0, 1}));
  Var k = t.Constant(M(1, 4, {0.3, 0.1, -0.2, 0.4}));
  Var v = t.Constant(M(1, 4, {5, 6, 7, 8}));
  Var a = Attention(q, k, v, 2);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(a.value()(i, j) == doctest::Approx(v.value()(0, j)));
  }
}

TEST_CASE("masked softmax puts zero mass on masked entries") {
  Tape t;
  BoolMat mask(2, 3);
  mask << true, false, true, false, false, true;
  Var s = Softmax(t.Constant(M(2, 3, {1, 50, 2, 3, 4, 5})), &mask);
  CHECK(s.value()(0, 1) == 0.0);
  CHECK(s.value()(1, 0) == 0.0);
  CHECK(s.value()(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("layer norm normalizes each row") {
  Tape t;
  Rng rng(1);
  Mat x(6, 9);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.Uniform(-5, 5);
  Var y = LayerNorm(t.Constant(x), t.Constant(Mat::Ones(1, 9)), t.Constant(Mat::Zero(1, 9)), 0.0);
  for (int r = 0; r < 6; ++r) {
    const double mean = y.value().row(r).mean();
    const double var = (y.value().row(r).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("shape mismatch is rejected with the operand names") {
  Tape t;
  Var a = t.Constant(Mat::Zero(2, 3), "lhs");
  Var b = t.Constant(Mat::Zero(2, 3), "rhs");
  CHECK_THROWS_WITH_AS(MatMul(a, b), doctest::Contains("lhs"), std::invalid_argument);
  CHECK_THROWS_AS(Add(a, t.Constant(Mat::Zero(3, 2))), std::invalid_argument);
}

TEST_CASE("backward examples") {
  ParamStore p;
  p.Create("x", 1, 2) = M(1, 2, {1, 2});
  p.Create("unused", 2, 2);
  {
    Tape t;
    Gradients g = t.Backward(Sum(Square(t.Param(p, "x"))));
    CHECK(g.at("x")(0, 0) == 4.0 / 2.0);
    CHECK(g.at("x")(0, 1) == 4.0);
    CHECK(g.count("unused") == 0);
  }
  {
    Tape t;
    Var x = t.Param(p, "x");
    Var c = Scale(Sum(x), 0.0);
    Gradients g = t.Backward(c);
    CHECK(g.at("x").isZero(0.0));
  }
  {
    Tape t;
    Var out = Sum(t.Param(p, "x"));
    t.Backward(out);
    CHECK_THROWS_AS(t.Backward(out), std::logic_error);
  }
  {
    Tape t(false);
    Var out = Sum(t.Param(p, "x"));
    CHECK_THROWS_AS(t.Backward(out), std::logic_error);
  }
  {
    Tape t;
    t.Freeze("x");
    Gradients g = t.Backward(Sum(Square(t.Param(p, "x"))));
    CHECK(g.empty());
  }
}

TEST_CASE("gradient checks per layer") {
  SUBCASE("affine + silu + matmul") {
    CheckLayer({"x", "w", "b", "w2"}, [](Tape& t, const ParamStore& p) {
      Var h = Silu(Affine(t.Param(p, "x"), t.Param(p, "w"), t.Param(p, "b")));
      return Project(t, Tanh(MatMul(h, t.Param(p, "w2"))));
    });
  }
  SUBCASE("layer norm") {
    CheckLayer({"x", "g", "b"}, [](Tape& t, const ParamStore& p) {
      return Project(t, LayerNorm(t.Param(p, "x"), t.Param(p, "g"), t.Param(p, "b")));
    });
  }
  SUBCASE("softmax and log-softmax with a mask") {
    CheckLayer({"x"}, [](Tape& t, const ParamStore& p) {
      BoolMat mask = BoolMat::Constant(5, 8, true);
      mask(0, 3) = mask(2, 1) = mask(4, 7) = false;
      return Add(Project(t, Softmax(t.Param(p, "x"), &mask)),
                 Sum(PickRows(LogSoftmax(t.Param(p, "x"), &mask), {0, 2, 4, 6, 5})));
    });
  }
  SUBCASE("cross attention over external keys and values") {
    CheckLayer({"x", "k", "v"}, [](Tape& t, const ParamStore& p) {
      BoolMat mask = BoolMat::Constant(5, 4, true);
      mask(1, 2) = false;
      return Project(t, Attention(t.Param(p, "x"), t.Param(p, "k"), t.Param(p, "v"), 2, &mask));
    });
  }
  SUBCASE("gated mlp") {
    CheckLayer({"x", "gate", "up", "down"}, [](Tape& t, const ParamStore& p) {
      return Project(t, GatedMlp(t.Param(p, "x"), t.Param(p, "gate"), t.Param(p, "up"),
                                 t.Param(p, "down")));
    });
  }
  SUBCASE("embedding, reshape, slicing and concatenation") {
    CheckLayer({"table", "x"}, [](Tape& t, const ParamStore& p) {
      Var e = EmbeddingLookup(t.Param(p, "table"), {3, 0, 3, 6});
      Var x = SliceRows(t.Param(p, "x"), 1, 4);
      Var c = ConcatCols({e, Sigmoid(x)});
      Var r = Reshape(ConcatRows({c, MulRow(c, SliceRows(c, 0, 1))}), 16, 8);
      return Add(Project(t, SliceCols(r, 2, 5)), Mean(AddRow(r, SliceRows(r, 3, 1))));
    });
  }
}

TEST_CASE("grad check: identity network has zero error and corrupted rules are caught") {
  ParamStore p;
  p.Create("x", 3, 3);
  GradCheckResult ok = GradCheck(p, {"x"}, [](Tape& t, const ParamStore& s) { return Sum(t.Param(s, "x")); },
                                 1e-5, 1e-4);
  CHECK(ok.pass);
  CHECK(ok.worst_relative_error == doctest::Approx(0.0).epsilon(1e-9));
  // A square op whose backward forgets the factor 2.
  auto broken = [](Tape& t, const ParamStore& s) {
    Var x = t.Param(s, "x");
    Mat v = x.value().array().square();
    Var y = t.Push(v, {x},
                   [xv = x.value()](const Mat&, const Mat& g, const std::vector<Mat*>& pg) {
                     if (pg[0]) *pg[0] += (g.array() * xv.array()).matrix();
                   },
                   "broken_square");
    return Sum(y);
  };
  const GradCheckResult bad = GradCheck(p, {"x"}, broken, 1e-5, 1e-4);
  CHECK_FALSE(bad.pass);
  CHECK(bad.worst_relative_error > 0.4);
}

TEST_CASE("adam examples") {
  ParamStore p;
  p.Create("w", 1, 3) = M(1, 3, {1, -2, 3});
  const Mat start = p.Get("w");
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.01;
  Gradients zero{{"w", Mat::Zero(1, 3)}};
  AdamStep(p, zero, state, cfg);
  CHECK(p.Get("w") == start);
  Gradients g{{"w", M(1, 3, {0.5, -3, 1e-3})}};
  ParamStore q;
  q.Create("w", 1, 3) = start;
  AdamState s2;
  AdamStep(q, g, s2, cfg);
  for (int i = 0; i < 3; ++i) {
    const double step = q.Get("w")(0, i) - start(0, i);
    CHECK(step * g.at("w")(0, i) < 0.0);
    CHECK(std::abs(step) == doctest::Approx(cfg.lr).epsilon(1e-3));
  }
  const Mat v1 = s2.v.at("w");
  AdamStep(q, g, s2, cfg);
  const Mat v2 = s2.v.at("w");
  for (int i = 0; i < 3; ++i) {
    const double g2 = g.at("w")(0, i) * g.at("w")(0, i);
    // v_t = (1 - beta2^t) g^2 for a constant gradient.
    CHECK(v2(0, i) > v1(0, i));
    CHECK(v2(0, i) == doctest::Approx((1 - cfg.beta2 * cfg.beta2) * g2).epsilon(1e-12));
    CHECK(v2(0, i) < g2);
  }
}

TEST_CASE("gradient clipping and finite checks") {
  Gradients g{{"a", M(1, 2, {3, 4})}};
  CHECK(GradNorm(g) == doctest::Approx(5.0));
  ClipGradNorm(g, 1.0);
  CHECK(GradNorm(g) == doctest::Approx(1.0));
  ParamStore p;
  p.Create("a", 2, 2);
  CHECK(p.AllFinite());
  p.Mutable("a")(0, 0) = std::nan("");
  CHECK_FALSE(p.AllFinite());
  CHECK_THROWS_AS(p.Create("a", 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(p.Set("a", Mat::Zero(3, 3)), std::invalid_argument);
}

TEST_CASE("initialization is deterministic per seed and name") {
  ParamStore a(5), b(5), c(6);
  a.Create("w", 4, 4);
  b.Create("w", 4, 4);
  c.Create("w", 4, 4);
  CHECK(a == b);
  CHECK_FALSE(a.Get("w") == c.Get("w"));
  CHECK(a.Get("w").cwiseAbs().maxCoeff() <= 0.5);
}

}  // namespace
}  // namespace driveflow
