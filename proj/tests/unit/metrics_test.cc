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
#include <limits>
#include <vector>

#include "doctest.h"
#include "driveflow/metrics.h"
#include "driveflow/random.h"

namespace driveflow {
namespace {

Trajectory Line(int n, double speed, double y = 0.0) {
  Trajectory t;
  for (int i = 0; i < n; ++i) t.waypoints.push_back({speed * kStepSeconds * i, y, 0.0});
  return t;
}

Scene Road() {
  Scene s;
  s.drivable_area = {{{-20, -5}, {200, -5}, {200, 5}, {-20, 5}}};
  LaneCenterline lane;
  for (int i = 0; i <= 40; ++i) {
    lane.points.push_back({-20.0 + 5.0 * i, 0.0});
    lane.directions.push_back(0.0);
  }
  s.lanes = {lane};
  s.route = lane.points;
  return s;
}

Obstacle Parked(double x, double y) {
  Obstacle o;
  o.trajectory.waypoints.assign(11, Waypoint{x, y, 0.0});
  return o;
}

// Hand-evaluated aggregates, independent of the library.
double OraclePdms(const SubScores& s) {
  return s.nc * s.dac * (5 * s.ttc + 2 * s.c + 5 * s.ep) / 12.0;
}
double OracleFilter(double a, double h) { return h == 0.0 ? 1.0 : a; }
double OracleEpdms(const SubScores& a, const SubScores& h) {
  const double gates = OracleFilter(a.nc, h.nc) * OracleFilter(a.dac, h.dac) *
                       OracleFilter(a.ddc, h.ddc) * OracleFilter(a.tlc, h.tlc);
  return gates * (5 * OracleFilter(a.ttc, h.ttc) + 5 * OracleFilter(a.ep, h.ep) +
                  2 * OracleFilter(a.hc, h.hc) + 2 * OracleFilter(a.lk, h.lk) +
                  2 * OracleFilter(a.ec, h.ec)) / 16.0;
}

SubScores RandomScores(Rng& rng) {
  SubScores s;
  auto gate = [&] { return rng.Uniform() < 0.2 ? 0.0 : 1.0; };
  auto cont = [&] { return rng.Uniform() < 0.2 ? 0.0 : rng.Uniform(); };
  s.nc = gate(); s.dac = gate(); s.ddc = gate(); s.tlc = gate();
  s.ep = cont(); s.ttc = gate(); s.lk = gate(); s.hc = gate(); s.ec = gate(); s.c = gate();
  return s;
}

TEST_CASE("pdms examples") {
  CHECK(Pdms(SubScores{}) == 1.0);
  SubScores s;
  s.nc = 0.0;
  CHECK(Pdms(s) == 0.0);
  SubScores h;
  h.ep = 0.5;
  CHECK(std::abs(Pdms(h) - 9.5 / 12.0) < 1e-12);
}

TEST_CASE("epdms examples") {
  CHECK(Epdms(SubScores{}, SubScores{}) == 1.0);
  SubScores a, h;
  a.dac = 0.0;
  h.dac = 0.0;
  CHECK(Epdms(a, h) == 1.0);
  SubScores b;
  b.ep = 0.8;
  b.ec = 0.5;
  CHECK(std::abs(Epdms(b, SubScores{}) - 0.875) < 1e-12);
}

TEST_CASE("aggregates match the oracle, bounded and monotone") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const SubScores a = RandomScores(rng);
    const SubScores h = RandomScores(rng);
    CHECK(std::abs(Pdms(a) - OraclePdms(a)) < 1e-12);
    CHECK(std::abs(Epdms(a, h) - OracleEpdms(a, h)) < 1e-12);
    CHECK(Pdms(a) >= 0.0);
    CHECK(Pdms(a) <= 1.0);
    CHECK(Epdms(a, h) >= 0.0);
    CHECK(Epdms(a, h) <= 1.0);
    if (a.nc == 0.0 || a.dac == 0.0) CHECK(Pdms(a) == 0.0);
    if ((a.nc == 0 && h.nc > 0) || (a.dac == 0 && h.dac > 0) || (a.ddc == 0 && h.ddc > 0) ||
        (a.tlc == 0 && h.tlc > 0)) {
      CHECK(Epdms(a, h) == 0.0);
    }
    // Raising any single field never lowers an aggregate.
    double SubScores::*fields[] = {&SubScores::nc, &SubScores::dac, &SubScores::ddc,
                                   &SubScores::tlc, &SubScores::ep, &SubScores::ttc,
                                   &SubScores::lk, &SubScores::hc, &SubScores::ec, &SubScores::c};
    for (auto f : fields) {
      SubScores up = a;
      up.*f = std::min(1.0, up.*f + rng.Uniform());
      CHECK(Pdms(up) >= Pdms(a));
      CHECK(Epdms(up, h) >= Epdms(a, h));
    }
    const double x = rng.Uniform();
    CHECK(FilterMetric(x, 0.3 + rng.Uniform()) == x);
    CHECK(FilterMetric(x, 0.0) == 1.0);
  }
}

TEST_CASE("collision sub-score") {
  Scene scene = Road();
  const Trajectory t = Line(11, 8.0);
  CHECK(SubNc(t, scene) == 1.0);
  scene.obstacles = {Parked(t.waypoints[4].x, 0.0)};
  CHECK(SubNc(t, scene) == 0.0);
  // Side by side with 0.1 m between the box edges.
  scene.obstacles = {Parked(20.0, 0.5 * kEgoWidth + 0.5 * 1.9 + 0.1)};
  CHECK(SubNc(t, scene) == 1.0);
  CHECK_FALSE(BoxesOverlap(EgoBox(t.waypoints[5]), ObstacleBox(scene.obstacles[0], 5)));
}

TEST_CASE("drivable area, direction, lane keeping and comfort") {
  const Scene scene = Road();
  CHECK(SubDac(Line(11, 8.0), scene) == 1.0);
  CHECK(SubDac(Line(11, 8.0, 4.5), scene) == 0.0);
  CHECK(SubDdc(Line(11, 8.0), scene) == 1.0);
  Trajectory backwards = Line(11, 8.0);
  for (Waypoint& w : backwards.waypoints) w.heading = kPi;
  CHECK(SubDdc(backwards, scene) == 0.0);
  CHECK(SubLk(Line(11, 8.0), scene) == 1.0);
  CHECK(SubLk(Line(11, 8.0, 2.0), scene) == 0.0);
  CHECK(SubComfort(Line(11, 8.0)) == 1.0);
  Trajectory jerky = Line(11, 8.0);
  jerky.waypoints[5].x += 2.0;
  CHECK(SubComfort(jerky) == 0.0);
}

TEST_CASE("ego progress") {
  const Scene scene = Road();
  const Trajectory ref = Line(11, 8.0);
  CHECK(SubEp(ref, ref, scene.route) == 1.0);
  CHECK(std::abs(SubEp(Line(11, 4.0), ref, scene.route) - 0.5) < 1e-9);
  CHECK(SubEp(Line(11, 4.0), Line(11, 0.0), scene.route) == 1.0);
}

TEST_CASE("traffic light compliance") {
  Scene scene = Road();
  TrafficLight light;
  light.stop_line_start = {30.0, -3.0};
  light.stop_line_end = {30.0, 3.0};
  light.schedule.assign(20, LightState::kRed);
  scene.traffic_lights = {light};
  CHECK(SubTlc(Line(11, 8.0), scene) == 0.0);
  CHECK(SubTlc(Line(11, 2.0), scene) == 1.0);
  scene.traffic_lights[0].schedule.assign(20, LightState::kGreen);
  CHECK(SubTlc(Line(11, 8.0), scene) == 1.0);
}

TEST_CASE("time to collision") {
  Scene scene = Road();
  scene.obstacles = {Parked(48.0, 0.0)};
  // Ends just short of the obstacle but closing fast.
  CHECK(SubTtc(Line(11, 7.5), scene) == 0.0);
  scene.obstacles = {Parked(150.0, 0.0)};
  CHECK(SubTtc(Line(11, 7.5), scene) == 1.0);
}

TEST_CASE("score: invalid inputs and purity") {
  const Scenario s = GenerateScenario(3, Archetype::kCutIn, Label::kPositive);
  const ScoreReport empty = Score(Trajectory{}, s);
  CHECK_FALSE(empty.valid);
  CHECK(empty.pdms == 0.0);
  CHECK(empty.epdms == 0.0);
  Trajectory nan = s.reference;
  nan.waypoints[3].x = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(Score(nan, s).valid);
  const ScoreReport a = Score(s.reference, s);
  CHECK(a.valid);
  CHECK(a == Score(s.reference, s));
  CHECK(a.pdms >= 0.8);
}

TEST_CASE("extended comfort compares first-step accelerations") {
  const Trajectory plan = Line(11, 8.0);
  CHECK(SubEc(plan, plan) == 1.0);
  Trajectory other;
  double x = 0.0;
  for (int i = 0; i < 11; ++i) {
    other.waypoints.push_back({x, 0.0, 0.0});
    x += (8.0 - 2.0 * i) > 0 ? (8.0 - 2.0 * i) * 0.5 : 0.0;
  }
  CHECK(SubEc(plan, other) == 0.0);
}

}  // namespace
}  // namespace driveflow
