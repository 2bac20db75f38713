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

// Driving scorers: per-metric sub-scores and the PDMS / EPDMS aggregates.

#ifndef DRIVEFLOW_METRICS_H_
#define DRIVEFLOW_METRICS_H_

#include <optional>

#include "driveflow/microworld.h"

namespace driveflow {

struct MetricsConfig {
  double max_accel = 3.0;      // m/s^2
  double max_jerk = 5.0;       // m/s^3
  double ttc_horizon = 1.0;    // s
  double ttc_step = 0.25;      // s
  double ec_tolerance = 1.0;   // m/s^2
  double lane_width = kLaneWidth;
  int lane_change_window = 2;  // steps excluded around a nearest-lane switch

  friend bool operator==(const MetricsConfig&, const MetricsConfig&) = default;
};

struct SubScores {
  double nc = 1.0;
  double dac = 1.0;
  double ddc = 1.0;
  double tlc = 1.0;
  double ep = 1.0;
  double ttc = 1.0;
  double lk = 1.0;
  double hc = 1.0;
  double ec = 1.0;
  double c = 1.0;

  friend bool operator==(const SubScores&, const SubScores&) = default;
};

struct ScoreReport {
  SubScores subscores;
  double pdms = 0.0;
  double epdms = 0.0;
  bool valid = false;

  friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

// Plans are time-aligned with the scene: waypoint i sits at time index
// traj.t0 + i.
double SubNc(const Trajectory& traj, const Scene& scene);
double SubDac(const Trajectory& traj, const Scene& scene);
double SubDdc(const Trajectory& traj, const Scene& scene);
double SubTlc(const Trajectory& traj, const Scene& scene);
// Progress along the route relative to the reference's progress.
double SubEp(const Trajectory& traj, const Trajectory& reference,
             std::span<const Vec2> route);
// Progress along the route relative to driving the whole horizon at the
// speed limit.
double SubEpRoute(const Trajectory& traj, std::span<const Vec2> route,
                  double speed_limit);
double SubTtc(const Trajectory& traj, const Scene& scene,
              const MetricsConfig& config = {});
double SubLk(const Trajectory& traj, const Scene& scene,
             const MetricsConfig& config = {});
double SubComfort(const Trajectory& traj, const MetricsConfig& config = {});
double SubHc(const Trajectory& traj, const Trajectory& history,
             const MetricsConfig& config = {});
double SubEc(const Trajectory& traj, const Trajectory& prev_plan,
             const MetricsConfig& config = {});

// Arc-length progress of the first-to-last waypoint projected on `route`.
double RouteProgress(const Trajectory& traj, std::span<const Vec2> route);

double Pdms(const SubScores& s);
double FilterMetric(double agent, double human);
double Epdms(const SubScores& agent, const SubScores& human);

// All sub-scores of `traj` in the scenario. Ego progress is measured against
// the route for negative scenarios and against the reference otherwise.
SubScores ComputeSubScores(const Trajectory& traj, const Scenario& scenario,
                           const Trajectory* prev_plan,
                           const MetricsConfig& config);

// Empty or non-finite plans yield valid = false and zero aggregates. The
// human side of EPDMS is the scenario's own reference.
ScoreReport Score(const Trajectory& traj, const Scenario& scenario,
                  const Trajectory* prev_plan = nullptr,
                  const MetricsConfig& config = {});

}  // namespace driveflow

#endif  // DRIVEFLOW_METRICS_H_
