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

// Deterministic 2-D driving micro-world: kinematics, scene geometry,
// scenario archetypes with positive/negative/recovery references, and
// geometric maneuver classification.

#ifndef DRIVEFLOW_MICROWORLD_H_
#define DRIVEFLOW_MICROWORLD_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driveflow/geometry.h"

namespace driveflow {

inline constexpr double kStepSeconds = 0.5;
inline constexpr double kLaneWidth = 3.5;
inline constexpr int kHistorySteps = 4;   // history has kHistorySteps + 1 poses
inline constexpr int kHorizonSteps = 10;  // plans have kHorizonSteps + 1 poses
inline constexpr double kEgoLength = 4.6;
inline constexpr double kEgoWidth = 1.9;

struct EgoState {
  Vec2 position;
  double heading = 0.0;
  double speed = 0.0;
  double acceleration = 0.0;
};

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

// Poses sampled every `dt` seconds; waypoint i sits at time index t0 + i.
struct Trajectory {
  std::vector<Waypoint> waypoints;
  double dt = kStepSeconds;
  int t0 = 0;

  size_t size() const { return waypoints.size(); }
  bool empty() const { return waypoints.empty(); }
  bool AllFinite() const;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Control {
  double accel = 0.0;     // m/s^2
  double yaw_rate = 0.0;  // rad/s
};

// Integrates a unicycle with zero-order-hold controls. Speed and heading
// take an Euler step; position follows the exact arc for the step's constant
// speed and yaw rate. Returns one waypoint per control (the start is not
// included). Speed is clamped at zero.
Trajectory RolloutKinematic(const EgoState& start,
                            std::span<const Control> controls, double dt);

enum class ObstacleKind { kVehicle, kPedestrian, kCone };
enum class LightState { kRed, kGreen };
enum class Label { kPositive, kNegative, kRecovery };
enum class Instruction {
  kGoStraight,
  kTurnLeft,
  kTurnRight,
  kChangeLeft,
  kChangeRight,
  kStop
};
enum class Archetype {
  kLaneChange,
  kLaneBias,
  kVru,
  kConstruction,
  kStopSign,
  kCutIn,
  kLeadBraking
};
enum class Lateral { kStraight, kLeftTurn, kRightTurn, kChangeLeft, kChangeRight };
enum class Longitudinal { kKeep, kAccelerate, kDecelerate };

inline constexpr int kNumInstructions = 6;
inline constexpr int kNumArchetypes = 7;
inline constexpr int kNumLateral = 5;

std::string_view ToString(ObstacleKind v);
std::string_view ToString(LightState v);
std::string_view ToString(Label v);
std::string_view ToString(Instruction v);
std::string_view ToString(Archetype v);
std::string_view ToString(Lateral v);
std::string_view ToString(Longitudinal v);

// Parsers throw std::invalid_argument on unknown names.
ObstacleKind ParseObstacleKind(std::string_view s);
LightState ParseLightState(std::string_view s);
Label ParseLabel(std::string_view s);
Instruction ParseInstruction(std::string_view s);
Archetype ParseArchetype(std::string_view s);
Lateral ParseLateral(std::string_view s);
Longitudinal ParseLongitudinal(std::string_view s);

std::vector<Archetype> AllArchetypes();

struct Obstacle {
  ObstacleKind kind = ObstacleKind::kVehicle;
  double length = 4.6;
  double width = 1.9;
  Trajectory trajectory;

  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

struct LaneCenterline {
  std::vector<Vec2> points;
  std::vector<double> directions;  // lane direction at each point

  friend bool operator==(const LaneCenterline&, const LaneCenterline&) = default;
};

struct TrafficLight {
  Vec2 stop_line_start;
  Vec2 stop_line_end;
  std::vector<LightState> schedule;  // state at time index 0, 1, ...

  // Schedule lookup; times past the end hold the last state.
  LightState StateAt(int t) const;
  friend bool operator==(const TrafficLight&, const TrafficLight&) = default;
};

struct Scene {
  std::vector<std::vector<Vec2>> drivable_area;  // union of simple polygons
  std::vector<LaneCenterline> lanes;
  std::vector<Obstacle> obstacles;
  std::vector<TrafficLight> traffic_lights;
  std::vector<Vec2> route;
  double speed_limit = 12.0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Scenario {
  std::string id;
  Scene scene;
  Trajectory ego_history;  // kHistorySteps + 1 poses ending at t = 0
  Trajectory reference;    // kHorizonSteps + 1 poses starting at t = 0
  Label label = Label::kPositive;
  Instruction instruction = Instruction::kGoStraight;
  Archetype archetype = Archetype::kLaneChange;
  std::vector<Lateral> reasoning_tags;  // empty for fast thinking

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Checks the structural invariants of a scenario; returns a description of
// the first violation or nullopt.
std::optional<std::string> ValidateScenario(const Scenario& scenario);

// Pure function of its arguments. All three labels of one (seed, archetype)
// share the scene and the ego history.
Scenario GenerateScenario(uint64_t seed, Archetype archetype, Label label);

struct ManeuverLabel {
  Lateral lateral = Lateral::kStraight;
  Longitudinal longitudinal = Longitudinal::kKeep;

  friend bool operator==(const ManeuverLabel&, const ManeuverLabel&) = default;
};

struct ManeuverThresholds {
  double turn_heading = kPi / 6.0;          // rad
  double lane_change_offset = 0.5 * kLaneWidth;  // m
  double speed_change = 1.5;                // m/s over the horizon
};

// Full-horizon heuristic from net heading change, net lateral offset in the
// initial frame, and net chord-speed change. Requires >= 2 waypoints.
ManeuverLabel ClassifyManeuver(const Trajectory& traj,
                               const ManeuverThresholds& thresholds = {});

// Chord speeds |p[i+1] - p[i]| / dt.
std::vector<double> ChordSpeeds(const Trajectory& traj);

// Poses expressed in the frame of `origin` (position and heading).
Trajectory ToLocalFrame(const Trajectory& traj, const Waypoint& origin);
Trajectory ToWorldFrame(const Trajectory& traj, const Waypoint& origin);

OrientedBox EgoBox(const Waypoint& w);
OrientedBox ObstacleBox(const Obstacle& o, int time_index);

// Pose of an obstacle at an absolute time index (clamped to its extent).
Waypoint ObstaclePoseAt(const Obstacle& o, int time_index);

}  // namespace driveflow

#endif  // DRIVEFLOW_MICROWORLD_H_
