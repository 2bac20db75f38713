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

#include "driveflow/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace driveflow {
namespace {

double Accel(const std::vector<double>& v, size_t i, double dt) {
  return (v[i + 1] - v[i]) / dt;
}

struct NearestLane {
  int lane = -1;
  double distance = std::numeric_limits<double>::infinity();
  double direction = 0.0;
};

NearestLane FindNearestLane(Vec2 p, const Scene& scene) {
  NearestLane best;
  for (size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto& lane = scene.lanes[i];
    if (lane.points.size() < 2) continue;
    const PolylineProjection proj = ProjectOntoPolyline(p, lane.points);
    if (proj.distance < best.distance) {
      best.lane = static_cast<int>(i);
      best.distance = proj.distance;
      best.direction = proj.direction;
    }
  }
  return best;
}

bool InDrivableArea(Vec2 p, const Scene& scene) {
  for (const auto& poly : scene.drivable_area) {
    if (PointInPolygon(p, poly)) return true;
  }
  return false;
}

// Velocity of waypoint i from the forward chord (backward at the end).
Vec2 ChordVelocity(const std::vector<Waypoint>& w, size_t i, double dt) {
  if (w.size() < 2) return {};
  const size_t j = i + 1 < w.size() ? i : w.size() - 2;
  return (1.0 / dt) * (w[j + 1].position() - w[j].position());
}

}  // namespace

double SubNc(const Trajectory& traj, const Scene& scene) {
  for (size_t i = 0; i < traj.size(); ++i) {
    const OrientedBox ego = EgoBox(traj.waypoints[i]);
    const int t = traj.t0 + static_cast<int>(i);
    for (const Obstacle& o : scene.obstacles) {
      if (BoxesOverlap(ego, ObstacleBox(o, t))) return 0.0;
    }
  }
  return 1.0;
}

double SubDac(const Trajectory& traj, const Scene& scene) {
  for (const Waypoint& w : traj.waypoints) {
    for (const Vec2& c : EgoBox(w).Corners()) {
      if (!InDrivableArea(c, scene)) return 0.0;
    }
  }
  return 1.0;
}

double SubDdc(const Trajectory& traj, const Scene& scene) {
  if (scene.lanes.empty()) return 1.0;
  for (const Waypoint& w : traj.waypoints) {
    const NearestLane lane = FindNearestLane(w.position(), scene);
    if (lane.lane < 0) continue;
    if (std::abs(NormalizeAngle(w.heading - lane.direction)) > 0.5 * kPi + 1e-9)
      return 0.0;
  }
  return 1.0;
}

double SubTlc(const Trajectory& traj, const Scene& scene) {
  for (size_t i = 0; i + 1 < traj.size(); ++i) {
    const int t = traj.t0 + static_cast<int>(i);
    for (const TrafficLight& light : scene.traffic_lights) {
      if (light.StateAt(t) != LightState::kRed) continue;
      if (SegmentsIntersect(traj.waypoints[i].position(),
                            traj.waypoints[i + 1].position(),
                            light.stop_line_start, light.stop_line_end)) {
        // Touching the line from behind is not a crossing.
        const Vec2 line = light.stop_line_end - light.stop_line_start;
        const double side0 =
            Cross(line, traj.waypoints[i].position() - light.stop_line_start);
        const double side1 =
            Cross(line, traj.waypoints[i + 1].position() - light.stop_line_start);
        if (side0 != 0.0 && side1 != 0.0 && (side0 > 0.0) != (side1 > 0.0))
          return 0.0;
        if (side0 == 0.0 && side1 != 0.0) return 0.0;
      }
    }
  }
  return 1.0;
}

double RouteProgress(const Trajectory& traj, std::span<const Vec2> route) {
  if (traj.size() < 2 || route.size() < 2) return 0.0;
  const double s0 = ProjectOntoPolyline(traj.waypoints.front().position(), route).arc_length;
  const double s1 = ProjectOntoPolyline(traj.waypoints.back().position(), route).arc_length;
  return s1 - s0;
}

double SubEp(const Trajectory& traj, const Trajectory& reference,
             std::span<const Vec2> route) {
  const double ref = RouteProgress(reference, route);
  if (ref < 0.1) return 1.0;
  return std::clamp(RouteProgress(traj, route) / ref, 0.0, 1.0);
}

double SubEpRoute(const Trajectory& traj, std::span<const Vec2> route,
                  double speed_limit) {
  const double horizon =
      speed_limit * traj.dt * static_cast<double>(std::max<size_t>(traj.size(), 1) - 1);
  if (horizon < 0.1) return 1.0;
  return std::clamp(RouteProgress(traj, route) / horizon, 0.0, 1.0);
}

double SubTtc(const Trajectory& traj, const Scene& scene,
              const MetricsConfig& config) {
  const int n_probe =
      static_cast<int>(std::floor(config.ttc_horizon / config.ttc_step + 1e-9));
  for (size_t i = 0; i < traj.size(); ++i) {
    const Waypoint& w = traj.waypoints[i];
    const Vec2 ego_v = ChordVelocity(traj.waypoints, i, traj.dt);
    const int t = traj.t0 + static_cast<int>(i);
    for (const Obstacle& o : scene.obstacles) {
      const Waypoint ow = ObstaclePoseAt(o, t);
      // Only obstacles ahead of the ego center are considered.
      if (Rotate(ow.position() - w.position(), -w.heading).x < 0.0) continue;
      const Waypoint next = ObstaclePoseAt(o, t + 1);
      Vec2 ov = (1.0 / o.trajectory.dt) * (next.position() - ow.position());
      if (t + 1 - o.trajectory.t0 >= static_cast<int>(o.trajectory.size())) {
        const Waypoint prev = ObstaclePoseAt(o, t - 1);
        ov = (1.0 / o.trajectory.dt) * (ow.position() - prev.position());
      }
      for (int k = 1; k <= n_probe; ++k) {
        const double dt = config.ttc_step * k;
        OrientedBox ego = EgoBox(w);
        ego.center = ego.center + dt * ego_v;
        OrientedBox other{ow.position() + dt * ov, ow.heading, o.length, o.width};
        if (BoxesOverlap(ego, other)) return 0.0;
      }
    }
  }
  return 1.0;
}

double SubLk(const Trajectory& traj, const Scene& scene,
             const MetricsConfig& config) {
  if (scene.lanes.empty()) return 1.0;
  const int n = static_cast<int>(traj.size());
  std::vector<NearestLane> nearest;
  for (const Waypoint& w : traj.waypoints) nearest.push_back(FindNearestLane(w.position(), scene));
  std::vector<bool> excluded(n, false);
  for (int i = 1; i < n; ++i) {
    if (nearest[i].lane != nearest[i - 1].lane) {
      for (int j = std::max(0, i - 1 - config.lane_change_window);
           j <= std::min(n - 1, i + config.lane_change_window); ++j) {
        excluded[j] = true;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!excluded[i] && nearest[i].distance > 0.5 * config.lane_width + 1e-9) return 0.0;
  }
  return 1.0;
}

double SubComfort(const Trajectory& traj, const MetricsConfig& config) {
  const std::vector<double> v = ChordSpeeds(traj);
  std::vector<double> a;
  for (size_t i = 0; i + 1 < v.size(); ++i) a.push_back(Accel(v, i, traj.dt));
  for (double x : a) {
    if (std::abs(x) > config.max_accel + 1e-9) return 0.0;
  }
  for (size_t i = 0; i + 1 < a.size(); ++i) {
    if (std::abs((a[i + 1] - a[i]) / traj.dt) > config.max_jerk + 1e-9) return 0.0;
  }
  return 1.0;
}

double SubHc(const Trajectory& traj, const Trajectory& history,
             const MetricsConfig& config) {
  Trajectory joined = history;
  const int end = history.t0 + static_cast<int>(history.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    if (traj.t0 + static_cast<int>(i) >= end) joined.waypoints.push_back(traj.waypoints[i]);
  }
  return SubComfort(joined, config);
}

double SubEc(const Trajectory& traj, const Trajectory& prev_plan,
             const MetricsConfig& config) {
  if (traj.size() < 3) return 1.0;
  const std::vector<double> v = ChordSpeeds(traj);
  const double a = Accel(v, 0, traj.dt);
  const int offset = traj.t0 - prev_plan.t0;
  if (offset < 0 || offset + 2 >= static_cast<int>(prev_plan.size())) return 1.0;
  const std::vector<double> pv = ChordSpeeds(prev_plan);
  const double pa = Accel(pv, static_cast<size_t>(offset), prev_plan.dt);
  return std::abs(a - pa) <= config.ec_tolerance + 1e-12 ? 1.0 : 0.0;
}

double Pdms(const SubScores& s) {
  return s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep) / 12.0;
}

double FilterMetric(double agent, double human) {
  return human == 0.0 ? 1.0 : agent;
}

double Epdms(const SubScores& a, const SubScores& h) {
  const double gates = FilterMetric(a.nc, h.nc) * FilterMetric(a.dac, h.dac) *
                       FilterMetric(a.ddc, h.ddc) * FilterMetric(a.tlc, h.tlc);
  const double weighted =
      (5.0 * FilterMetric(a.ttc, h.ttc) + 5.0 * FilterMetric(a.ep, h.ep) +
       2.0 * FilterMetric(a.hc, h.hc) + 2.0 * FilterMetric(a.lk, h.lk) +
       2.0 * FilterMetric(a.ec, h.ec)) /
      16.0;
  return gates * weighted;
}

SubScores ComputeSubScores(const Trajectory& traj, const Scenario& scenario,
                           const Trajectory* prev_plan,
                           const MetricsConfig& config) {
  const Scene& scene = scenario.scene;
  SubScores s;
  s.nc = SubNc(traj, scene);
  s.dac = SubDac(traj, scene);
  s.ddc = SubDdc(traj, scene);
  s.tlc = SubTlc(traj, scene);
  s.ep = scenario.label == Label::kNegative
             ? SubEpRoute(traj, scene.route, scene.speed_limit)
             : SubEp(traj, scenario.reference, scene.route);
  s.ttc = SubTtc(traj, scene, config);
  s.lk = SubLk(traj, scene, config);
  s.c = SubComfort(traj, config);
  s.hc = SubHc(traj, scenario.ego_history, config);
  s.ec = prev_plan != nullptr ? SubEc(traj, *prev_plan, config) : 1.0;
  return s;
}

ScoreReport Score(const Trajectory& traj, const Scenario& scenario,
                  const Trajectory* prev_plan, const MetricsConfig& config) {
  ScoreReport report;
  if (traj.empty() || !traj.AllFinite() || !(traj.dt > 0.0)) {
    report.subscores = SubScores{0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    return report;
  }
  report.valid = true;
  report.subscores = ComputeSubScores(traj, scenario, prev_plan, config);
  const SubScores human =
      ComputeSubScores(scenario.reference, scenario, nullptr, config);
  report.pdms = Pdms(report.subscores);
  report.epdms = Epdms(report.subscores, human);
  return report;
}

}  // namespace driveflow
