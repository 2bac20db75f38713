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

#include "driveflow/microworld.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "driveflow/random.h"

namespace driveflow {

bool Trajectory::AllFinite() const {
  if (!std::isfinite(dt)) return false;
  for (const Waypoint& w : waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y) ||
        !std::isfinite(w.heading))
      return false;
  }
  return true;
}

Trajectory RolloutKinematic(const EgoState& start,
                            std::span<const Control> controls, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument("rollout: dt must be positive and finite");
  }
  if (!std::isfinite(start.position.x) || !std::isfinite(start.position.y) ||
      !std::isfinite(start.heading) || !std::isfinite(start.speed)) {
    throw std::invalid_argument("rollout: non-finite start state");
  }
  Trajectory out;
  out.dt = dt;
  out.t0 = 1;
  out.waypoints.reserve(controls.size());
  double x = start.position.x;
  double y = start.position.y;
  double heading = start.heading;
  double speed = std::max(0.0, start.speed);
  for (const Control& c : controls) {
    if (!std::isfinite(c.accel) || !std::isfinite(c.yaw_rate)) {
      throw std::invalid_argument("rollout: non-finite control");
    }
    const double turn = c.yaw_rate * dt;
    if (std::abs(turn) < 1e-9) {
      x += speed * dt * std::cos(heading + 0.5 * turn);
      y += speed * dt * std::sin(heading + 0.5 * turn);
    } else {
      const double radius = speed / c.yaw_rate;
      x += radius * (std::sin(heading + turn) - std::sin(heading));
      y -= radius * (std::cos(heading + turn) - std::cos(heading));
    }
    heading = NormalizeAngle(heading + turn);
    speed = std::max(0.0, speed + c.accel * dt);
    out.waypoints.push_back({x, y, heading});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enum names.

namespace {

template <typename E, size_t N>
E ParseEnum(std::string_view s, const std::array<std::string_view, N>& names,
            const char* what) {
  for (size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw std::invalid_argument(std::string("unknown ") + what + ": '" +
                              std::string(s) + "'");
}

constexpr std::array<std::string_view, 3> kObstacleKindNames = {
    "vehicle", "pedestrian", "cone"};
constexpr std::array<std::string_view, 2> kLightNames = {"red", "green"};
constexpr std::array<std::string_view, 3> kLabelNames = {"positive", "negative",
                                                         "recovery"};
constexpr std::array<std::string_view, 6> kInstructionNames = {
    "go_straight", "turn_left", "turn_right",
    "change_left", "change_right", "stop"};
constexpr std::array<std::string_view, 7> kArchetypeNames = {
    "lane_change", "lane_bias", "vru",        "construction",
    "stop_sign",   "cut_in",    "lead_braking"};
constexpr std::array<std::string_view, 5> kLateralNames = {
    "straight", "left_turn", "right_turn", "change_left", "change_right"};
constexpr std::array<std::string_view, 3> kLongitudinalNames = {
    "keep", "accelerate", "decelerate"};

}  // namespace

std::string_view ToString(ObstacleKind v) { return kObstacleKindNames[static_cast<int>(v)]; }
std::string_view ToString(LightState v) { return kLightNames[static_cast<int>(v)]; }
std::string_view ToString(Label v) { return kLabelNames[static_cast<int>(v)]; }
std::string_view ToString(Instruction v) { return kInstructionNames[static_cast<int>(v)]; }
std::string_view ToString(Archetype v) { return kArchetypeNames[static_cast<int>(v)]; }
std::string_view ToString(Lateral v) { return kLateralNames[static_cast<int>(v)]; }
std::string_view ToString(Longitudinal v) { return kLongitudinalNames[static_cast<int>(v)]; }

ObstacleKind ParseObstacleKind(std::string_view s) {
  return ParseEnum<ObstacleKind>(s, kObstacleKindNames, "obstacle kind");
}
LightState ParseLightState(std::string_view s) {
  return ParseEnum<LightState>(s, kLightNames, "light state");
}
Label ParseLabel(std::string_view s) {
  return ParseEnum<Label>(s, kLabelNames, "label");
}
Instruction ParseInstruction(std::string_view s) {
  return ParseEnum<Instruction>(s, kInstructionNames, "instruction");
}
Archetype ParseArchetype(std::string_view s) {
  return ParseEnum<Archetype>(s, kArchetypeNames, "archetype");
}
Lateral ParseLateral(std::string_view s) {
  return ParseEnum<Lateral>(s, kLateralNames, "lateral maneuver");
}
Longitudinal ParseLongitudinal(std::string_view s) {
  return ParseEnum<Longitudinal>(s, kLongitudinalNames, "longitudinal maneuver");
}

std::vector<Archetype> AllArchetypes() {
  std::vector<Archetype> out;
  for (int i = 0; i < kNumArchetypes; ++i) out.push_back(static_cast<Archetype>(i));
  return out;
}

LightState TrafficLight::StateAt(int t) const {
  if (schedule.empty()) return LightState::kGreen;
  if (t < 0) return schedule.front();
  if (t >= static_cast<int>(schedule.size())) return schedule.back();
  return schedule[t];
}

// ---------------------------------------------------------------------------
// Frames and boxes.

Trajectory ToLocalFrame(const Trajectory& traj, const Waypoint& origin) {
  Trajectory out = traj;
  for (Waypoint& w : out.waypoints) {
    const Vec2 p = Rotate(w.position() - origin.position(), -origin.heading);
    w = {p.x, p.y, NormalizeAngle(w.heading - origin.heading)};
  }
  return out;
}

Trajectory ToWorldFrame(const Trajectory& traj, const Waypoint& origin) {
  Trajectory out = traj;
  for (Waypoint& w : out.waypoints) {
    const Vec2 p = Rotate(w.position(), origin.heading) + origin.position();
    w = {p.x, p.y, NormalizeAngle(w.heading + origin.heading)};
  }
  return out;
}

OrientedBox EgoBox(const Waypoint& w) {
  return {w.position(), w.heading, kEgoLength, kEgoWidth};
}

Waypoint ObstaclePoseAt(const Obstacle& o, int time_index) {
  const auto& wps = o.trajectory.waypoints;
  if (wps.empty()) throw std::invalid_argument("obstacle without trajectory");
  const int i = std::clamp(time_index - o.trajectory.t0, 0,
                           static_cast<int>(wps.size()) - 1);
  return wps[i];
}

OrientedBox ObstacleBox(const Obstacle& o, int time_index) {
  const Waypoint w = ObstaclePoseAt(o, time_index);
  return {w.position(), w.heading, o.length, o.width};
}

// ---------------------------------------------------------------------------
// Maneuver classification.

std::vector<double> ChordSpeeds(const Trajectory& traj) {
  std::vector<double> v;
  for (size_t i = 0; i + 1 < traj.waypoints.size(); ++i) {
    v.push_back(Norm(traj.waypoints[i + 1].position() -
                     traj.waypoints[i].position()) /
                traj.dt);
  }
  return v;
}

ManeuverLabel ClassifyManeuver(const Trajectory& traj,
                               const ManeuverThresholds& th) {
  if (traj.waypoints.size() < 2) {
    throw std::invalid_argument("classify_maneuver needs >= 2 waypoints");
  }
  const auto& w = traj.waypoints;
  bool degenerate = true;
  for (const Waypoint& p : w) {
    if (!(p == w.front())) {
      degenerate = false;
      break;
    }
  }
  ManeuverLabel label;
  if (degenerate) return label;

  double heading_change = 0.0;
  for (size_t i = 0; i + 1 < w.size(); ++i) {
    heading_change += NormalizeAngle(w[i + 1].heading - w[i].heading);
  }
  if (heading_change >= th.turn_heading) {
    label.lateral = Lateral::kLeftTurn;
  } else if (heading_change <= -th.turn_heading) {
    label.lateral = Lateral::kRightTurn;
  } else {
    const Vec2 offset = Rotate(w.back().position() - w.front().position(),
                               -w.front().heading);
    if (offset.y > th.lane_change_offset) {
      label.lateral = Lateral::kChangeLeft;
    } else if (offset.y < -th.lane_change_offset) {
      label.lateral = Lateral::kChangeRight;
    }
  }
  const std::vector<double> v = ChordSpeeds(traj);
  if (v.size() >= 2) {
    const double dv = v.back() - v.front();
    if (dv >= th.speed_change) {
      label.longitudinal = Longitudinal::kAccelerate;
    } else if (dv <= -th.speed_change) {
      label.longitudinal = Longitudinal::kDecelerate;
    }
  }
  return label;
}

// ---------------------------------------------------------------------------
// Scenario synthesis.

namespace {

constexpr double kRoadStart = -80.0;
constexpr double kRoadEnd = 200.0;
constexpr double kPathSpacing = 0.25;

// Dense reference path with arc-length lookup.
class Path {
 public:
  explicit Path(std::vector<Vec2> points) : points_(std::move(points)) {
    arc_.assign(points_.size(), 0.0);
    for (size_t i = 1; i < points_.size(); ++i) {
      arc_[i] = arc_[i - 1] + Norm(points_[i] - points_[i - 1]);
    }
  }

  double Length() const { return arc_.back(); }
  const std::vector<Vec2>& points() const { return points_; }

  Vec2 PointAt(double s) const {
    s = std::clamp(s, 0.0, Length());
    auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    size_t i = it == arc_.begin() ? 0 : static_cast<size_t>(it - arc_.begin()) - 1;
    if (i + 1 >= points_.size()) return points_.back();
    const double seg = arc_[i + 1] - arc_[i];
    const double u = seg > 0.0 ? (s - arc_[i]) / seg : 0.0;
    return points_[i] + u * (points_[i + 1] - points_[i]);
  }

  double HeadingAt(double s) const {
    const double lo = std::max(0.0, s - 0.5);
    const double hi = std::min(Length(), s + 0.5);
    const Vec2 d = PointAt(hi) - PointAt(lo);
    return std::atan2(d.y, d.x);
  }

  Waypoint PoseAt(double s) const {
    const Vec2 p = PointAt(s);
    return {p.x, p.y, HeadingAt(s)};
  }

  // Arc length of the closest point.
  double Locate(Vec2 p) const { return ProjectOntoPolyline(p, points_).arc_length; }

 private:
  std::vector<Vec2> points_;
  std::vector<double> arc_;
};

double SmoothStep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

// y(x) = y0 + offset(x), sampled densely along x.
Path LateralProfilePath(double y0, const std::function<double(double)>& offset) {
  std::vector<Vec2> pts;
  for (double x = kRoadStart; x <= kRoadEnd + 1e-9; x += kPathSpacing) {
    pts.push_back({x, y0 + offset(x)});
  }
  return Path(std::move(pts));
}

Path StraightPath(double y0) {
  return LateralProfilePath(y0, [](double) { return 0.0; });
}

Path ShiftPath(double y0, double dy, double x_start, double length) {
  return LateralProfilePath(y0, [=](double x) {
    return dy * SmoothStep((x - x_start) / length);
  });
}

Path BumpPath(double y0, double dy, double x_start, double ramp_in,
              double plateau, double ramp_out) {
  return LateralProfilePath(y0, [=](double x) {
    const double up = SmoothStep((x - x_start) / ramp_in);
    const double down =
        SmoothStep((x - (x_start + ramp_in + plateau)) / ramp_out);
    return dy * (up - down);
  });
}

// Straight along +x at y0, quarter arc of \`radius\` starting at x_arc, then
// straight along +/-y.
Path TurnPath(double y0, double x_arc, double radius, bool left) {
  std::vector<Vec2> pts;
  for (double x = kRoadStart; x < x_arc; x += kPathSpacing) pts.push_back({x, y0});
  const double sign = left ? 1.0 : -1.0;
  const Vec2 center{x_arc, y0 + sign * radius};
  const int n_arc = static_cast<int>(std::ceil(0.5 * kPi * radius / kPathSpacing));
  for (int i = 0; i <= n_arc; ++i) {
    const double phi = 0.5 * kPi * i / n_arc;
    pts.push_back({center.x + radius * std::sin(phi),
                   center.y - sign * radius * std::cos(phi)});
  }
  const Vec2 end = pts.back();
  for (double d = kPathSpacing; d <= 100.0; d += kPathSpacing) {
    pts.push_back({end.x, end.y + sign * d});
  }
  return Path(std::move(pts));
}

std::vector<Vec2> Rectangle(double x0, double x1, double y0, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

LaneCenterline StraightLane(double y, double x0, double x1) {
  LaneCenterline lane;
  const int n = static_cast<int>(std::round((x1 - x0) / 5.0));
  for (int i = 0; i <= n; ++i) {
    lane.points.push_back({x0 + (x1 - x0) * i / n, y});
    lane.directions.push_back(0.0);
  }
  return lane;
}

LaneCenterline LaneFromPoints(const std::vector<Vec2>& pts, double spacing) {
  LaneCenterline lane;
  const Path path(pts);
  const int n = std::max(1, static_cast<int>(std::round(path.Length() / spacing)));
  for (int i = 0; i <= n; ++i) {
    const double s = path.Length() * i / n;
    lane.points.push_back(path.PointAt(s));
    lane.directions.push_back(path.HeadingAt(s));
  }
  return lane;
}

// Obstacle following \`path\` from arc length s0 with constant acceleration.
Obstacle PathObstacle(ObstacleKind kind, double length, double width,
                      const Path& path, double s0, double v0, double accel) {
  Obstacle o;
  o.kind = kind;
  o.length = length;
  o.width = width;
  o.trajectory.t0 = 0;
  double s = s0;
  double v = v0;
  for (int k = 0; k <= kHorizonSteps; ++k) {
    o.trajectory.waypoints.push_back(path.PoseAt(s));
    s += v * kStepSeconds;
    v = std::max(0.0, v + accel * kStepSeconds);
  }
  return o;
}

Obstacle StaticObstacle(ObstacleKind kind, double length, double width,
                        Waypoint pose) {
  Obstacle o;
  o.kind = kind;
  o.length = length;
  o.width = width;
  o.trajectory.waypoints.assign(kHorizonSteps + 1, pose);
  return o;
}

// Longitudinal expert: IDM car following toward a desired speed with virtual
// stop points, under acceleration and per-step jerk limits.
struct DriverParams {
  double desired_speed = 12.0;
  double max_accel = 1.5;
  double comfort_decel = 2.0;
  double headway = 1.2;
  double min_gap = 4.0;
  double accel_floor = -2.4;
  double accel_ceiling = 2.0;
  double max_accel_step = 2.0;  // |a[k+1] - a[k]|
  double corridor_half_width = kEgoWidth / 2.0 + 0.3;
  int react_after = 0;          // ignore obstacles before this step
};

struct Lead {
  double gap;    // bumper-to-bumper along the path
  double speed;  // along the path
};

using StopFn = std::function<std::optional<double>(int k, double s)>;

double IdmAccel(const DriverParams& p, double v, const std::vector<Lead>& leads) {
  const double v_ratio = p.desired_speed > 0.1 ? v / p.desired_speed : 2.0;
  double interaction = 0.0;
  for (const Lead& lead : leads) {
    const double dv = v - lead.speed;
    const double s_star =
        p.min_gap + std::max(0.0, v * p.headway +
                                      v * dv / (2.0 * std::sqrt(p.max_accel *
                                                                p.comfort_decel)));
    const double gap = std::max(lead.gap, 0.1);
    interaction = std::max(interaction, (s_star / gap) * (s_star / gap));
  }
  return p.max_accel * (1.0 - std::pow(v_ratio, 4) - interaction);
}

std::vector<Lead> FindLeads(const Path& path, double s_ego, int k,
                            const std::vector<Obstacle>& obstacles,
                            const DriverParams& p) {
  std::vector<Lead> leads;
  const double ego_front = s_ego + 0.5 * kEgoLength;
  const double heading = path.HeadingAt(s_ego);
  for (const Obstacle& o : obstacles) {
    const OrientedBox box = ObstacleBox(o, k);
    double s_min = std::numeric_limits<double>::infinity();
    double l_min = s_min;
    double l_max = -s_min;
    for (const Vec2& c : box.Corners()) {
      const double s = path.Locate(c);
      const Vec2 foot = path.PointAt(s);
      const double h = path.HeadingAt(s);
      const double lat = Cross({std::cos(h), std::sin(h)}, c - foot);
      s_min = std::min(s_min, s);
      l_min = std::min(l_min, lat);
      l_max = std::max(l_max, lat);
    }
    if (l_max < -p.corridor_half_width || l_min > p.corridor_half_width) continue;
    if (s_min < ego_front - 0.5) continue;
    const Waypoint pose = ObstaclePoseAt(o, k);
    const Waypoint next = ObstaclePoseAt(o, k + 1);
    const double speed = Norm(next.position() - pose.position()) / kStepSeconds;
    const double along = speed * std::cos(pose.heading - heading);
    leads.push_back({s_min - ego_front, along});
  }
  return leads;
}

struct SpeedPlan {
  std::vector<double> s;  // arc length at k = 0..kHorizonSteps
};

// \`extra_accel\` optionally caps the IDM command from above (scripted
// behaviors); \`stop\` returns an arc length the ego center must stay behind.
SpeedPlan PlanSpeed(const Path& path, double s0, double v0,
                    const std::vector<Obstacle>& obstacles,
                    const DriverParams& p, const StopFn& stop,
                    const std::function<std::optional<double>(int)>& scripted = {}) {
  SpeedPlan plan;
  double s = s0;
  double v = v0;
  double a_prev = 0.0;
  for (int k = 0; k <= kHorizonSteps; ++k) {
    plan.s.push_back(s);
    if (k == kHorizonSteps) break;
    std::vector<Lead> leads;
    if (k >= p.react_after) leads = FindLeads(path, s, k, obstacles, p);
    if (stop) {
      if (auto s_stop = stop(k, s)) {
        // A standing virtual lead whose rear sits min_gap past the stop point.
        leads.push_back({*s_stop + p.min_gap - (s + 0.5 * kEgoLength) +
                             0.5 * kEgoLength, 0.0});
      }
    }
    double a = IdmAccel(p, v, leads);
    if (scripted) {
      if (auto cap = scripted(k)) a = std::min(a, *cap);
    }
    a = std::clamp(a, p.accel_floor, p.accel_ceiling);
    a = std::clamp(a, a_prev - p.max_accel_step, a_prev + p.max_accel_step);
    const double v_next = std::max(0.0, v + a * kStepSeconds);
    a_prev = (v_next - v) / kStepSeconds;
    s += v * kStepSeconds;
    v = v_next;
  }
  return plan;
}

Trajectory TrajectoryAlong(const Path& path, const SpeedPlan& plan) {
  Trajectory t;
  t.t0 = 0;
  for (double s : plan.s) t.waypoints.push_back(path.PoseAt(s));
  return t;
}

Trajectory HistoryAlong(const Path& path, double s0, double v0) {
  Trajectory h;
  h.t0 = -kHistorySteps;
  for (int k = -kHistorySteps; k <= 0; ++k) {
    h.waypoints.push_back(path.PoseAt(s0 + v0 * kStepSeconds * k));
  }
  return h;
}

std::vector<Lateral> TagsFor(const Trajectory& reference) {
  const ManeuverLabel m = ClassifyManeuver(reference);
  if (m.lateral != Lateral::kStraight) return {m.lateral};
  if (m.longitudinal != Longitudinal::kKeep) return {Lateral::kStraight};
  return {};
}

struct Built {
  Scene scene;
  Path ego_path;
  double s0;
  double v0;
  Instruction instruction;
  Trajectory positive, negative, recovery;
};

// Each builder draws all scene randomness before branching on nothing
// label-specific, so the three labels share scene and history.

Built BuildLaneChange(Rng& rng) {
  const double v_lim = rng.Uniform(10.0, 14.0);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const bool left = rng.Index(2) == 0;
  const bool extra_lane = rng.Index(2) == 0;
  const double lead_x = rng.Uniform(45.0, 60.0);
  const double lead_speed = rng.Uniform(0.6, 0.75) * v0;
  const double target_x = rng.Uniform(50.0, 70.0);
  const double start_delay = rng.Uniform(0.5, 1.0);

  const double dir = left ? 1.0 : -1.0;
  const double target_y = dir * kLaneWidth;
  std::vector<double> lanes = {0.0, target_y};
  if (extra_lane) lanes.push_back(-dir * kLaneWidth);
  Scene scene;
  scene.speed_limit = v_lim;
  const double y_lo = *std::min_element(lanes.begin(), lanes.end()) - 0.5 * kLaneWidth;
  const double y_hi = *std::max_element(lanes.begin(), lanes.end()) + 0.5 * kLaneWidth;
  scene.drivable_area.push_back(Rectangle(kRoadStart, kRoadEnd, y_lo, y_hi));
  std::sort(lanes.begin(), lanes.end());
  for (double y : lanes) scene.lanes.push_back(StraightLane(y, kRoadStart, kRoadEnd));

  const Path ego_lane = StraightPath(0.0);
  const Path target_lane = StraightPath(target_y);
  scene.obstacles.push_back(PathObstacle(ObstacleKind::kVehicle, 4.6, 1.9, ego_lane,
                                         lead_x - kRoadStart, lead_speed, 0.0));
  scene.obstacles.push_back(PathObstacle(ObstacleKind::kVehicle, 4.6, 1.9,
                                         target_lane, target_x - kRoadStart, v0, 0.0));
  scene.route = target_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0,
          left ? Instruction::kChangeLeft : Instruction::kChangeRight, {}, {}, {}};
  DriverParams p;
  p.desired_speed = v_lim;

  const Path pos_path = ShiftPath(0.0, target_y, v0 * start_delay, v0 * 3.0);
  b.positive = TrajectoryAlong(pos_path, PlanSpeed(pos_path, b.s0, v0, scene.obstacles, p, {}));

  // Hesitation: drift toward the target lane, abort, brake, creep again.
  const Path neg_path = BumpPath(0.0, dir * 1.2, v0 * start_delay, v0 * 1.5, 0.0, v0 * 1.5);
  b.negative = TrajectoryAlong(
      neg_path, PlanSpeed(neg_path, b.s0, v0, scene.obstacles, p, {}, [](int k) -> std::optional<double> {
        if (k < 5) return -2.0;
        if (k < 7) return 0.0;
        return std::nullopt;
      }));

  const Path rec_path = ShiftPath(0.0, target_y, v0 * 1.5, v0 * 2.0);
  b.recovery = TrajectoryAlong(rec_path, PlanSpeed(rec_path, b.s0, v0, scene.obstacles, p, {}));
  return b;
}

Built BuildLaneBias(Rng& rng) {
  const double v_lim = rng.Uniform(9.0, 12.0);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const double truck_x = rng.Uniform(40.0, 55.0);
  const double encroach = rng.Uniform(0.6, 1.0);

  Scene scene;
  scene.speed_limit = v_lim;
  scene.drivable_area.push_back(Rectangle(kRoadStart, kRoadEnd, -0.5 * kLaneWidth - 3.0,
                                          1.5 * kLaneWidth));
  scene.lanes.push_back(StraightLane(0.0, kRoadStart, kRoadEnd));
  scene.lanes.push_back(StraightLane(kLaneWidth, kRoadStart, kRoadEnd));
  const double truck_len = 8.0;
  const double truck_w = 2.5;
  scene.obstacles.push_back(StaticObstacle(
      ObstacleKind::kVehicle, truck_len, truck_w,
      {truck_x, -0.5 * kLaneWidth + encroach - 0.5 * truck_w, 0.0}));
  const Path ego_lane = StraightPath(0.0);
  scene.route = ego_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0, Instruction::kGoStraight, {}, {}, {}};
  DriverParams p;
  p.desired_speed = v_lim;
  const double rear = truck_x - 0.5 * truck_len;
  const double nudge = encroach - 0.2;

  const Path pos_path = BumpPath(0.0, nudge, rear - 24.0, 20.0, truck_len + 4.0, 15.0);
  b.positive = TrajectoryAlong(pos_path, PlanSpeed(pos_path, b.s0, v0, scene.obstacles, p, {}));

  // Over-conservative: holds the lane center and stops behind the truck.
  b.negative = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, p, {}));

  // Borrows the adjacent lane around the truck, then returns.
  const Path rec_path = BumpPath(0.0, 2.0, rear - 26.0, 20.0, truck_len + 4.0, 18.0);
  b.recovery = TrajectoryAlong(rec_path, PlanSpeed(rec_path, b.s0, v0, scene.obstacles, p, {}));
  return b;
}

Built BuildVru(Rng& rng) {
  const double v_lim = rng.Uniform(8.0, 10.5);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const bool left_lane = rng.Index(2) == 0;
  const double cross_x = rng.Uniform(30.0, 40.0);
  const double ped_y = rng.Uniform(-4.0, -2.6);
  const double ped_speed = rng.Uniform(1.4, 1.8);

  Scene scene;
  scene.speed_limit = v_lim;
  const double y_hi = (left_lane ? 1.5 : 0.5) * kLaneWidth;
  scene.drivable_area.push_back(Rectangle(kRoadStart, kRoadEnd, -0.5 * kLaneWidth, y_hi));
  scene.lanes.push_back(StraightLane(0.0, kRoadStart, kRoadEnd));
  if (left_lane) scene.lanes.push_back(StraightLane(kLaneWidth, kRoadStart, kRoadEnd));
  Obstacle ped;
  ped.kind = ObstacleKind::kPedestrian;
  ped.length = 0.6;
  ped.width = 0.6;
  for (int k = 0; k <= kHorizonSteps; ++k) {
    ped.trajectory.waypoints.push_back(
        {cross_x, ped_y + ped_speed * kStepSeconds * k, 0.5 * kPi});
  }
  scene.obstacles.push_back(ped);
  const Path ego_lane = StraightPath(0.0);
  scene.route = ego_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0, Instruction::kGoStraight, {}, {}, {}};
  const double stop_s = cross_x - kRoadStart - 0.3 - 1.5 - 0.5 * kEgoLength;
  const Obstacle ped_copy = ped;
  auto blocking = [ped_copy](int k) {
    const double y = ObstaclePoseAt(ped_copy, k).y;
    return y >= -4.5 && y <= 0.5 * kLaneWidth + 1.2;
  };
  DriverParams p;
  p.desired_speed = v_lim;
  // The pedestrian is handled through the virtual stop, not car following.
  const std::vector<Obstacle> none;
  b.positive = TrajectoryAlong(
      ego_lane, PlanSpeed(ego_lane, b.s0, v0, none, p,
                          [=](int k, double) -> std::optional<double> {
                            if (blocking(k) || blocking(k + 1)) return stop_s;
                            return std::nullopt;
                          }));
  // Freezes at the crossing even after it clears.
  b.negative = TrajectoryAlong(
      ego_lane, PlanSpeed(ego_lane, b.s0, v0, none, p,
                          [=](int, double) -> std::optional<double> { return stop_s; }));
  DriverParams brisk = p;
  brisk.max_accel = 2.0;
  b.recovery = TrajectoryAlong(
      ego_lane, PlanSpeed(ego_lane, b.s0, v0, none, brisk,
                          [=](int k, double) -> std::optional<double> {
                            if (blocking(k)) return stop_s;
                            return std::nullopt;
                          }));
  return b;
}

Built BuildConstruction(Rng& rng) {
  const double v_lim = rng.Uniform(10.0, 13.0);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const bool two_left = rng.Index(2) == 0;
  const double taper_x = rng.Uniform(40.0, 55.0);
  const double start_delay = rng.Uniform(0.5, 1.0);
  constexpr double kTaper = 15.0;

  Scene scene;
  scene.speed_limit = v_lim;
  const double half = 0.5 * kLaneWidth;
  const double y_top = (two_left ? 2.5 : 1.5) * kLaneWidth;
  scene.drivable_area.push_back(Rectangle(kRoadStart, kRoadEnd, half, y_top));
  scene.drivable_area.push_back(Rectangle(kRoadStart, taper_x, -half, half));
  scene.drivable_area.push_back({{taper_x, -half}, {taper_x + kTaper, half}, {taper_x, half}});
  scene.lanes.push_back(StraightLane(0.0, kRoadStart, taper_x));
  scene.lanes.push_back(StraightLane(kLaneWidth, kRoadStart, kRoadEnd));
  if (two_left) scene.lanes.push_back(StraightLane(2.0 * kLaneWidth, kRoadStart, kRoadEnd));
  for (int i = 0; i <= 6; ++i) {
    const double u = i / 6.0;
    scene.obstacles.push_back(StaticObstacle(
        ObstacleKind::kCone, 0.5, 0.5,
        {taper_x + u * kTaper, -half + 0.3 + u * (kLaneWidth - 0.6), 0.0}));
  }
  for (int i = 1; i <= 8; ++i) {
    scene.obstacles.push_back(StaticObstacle(ObstacleKind::kCone, 0.5, 0.5,
                                             {taper_x + kTaper + 5.0 * i, half - 0.3, 0.0}));
  }
  const Path ego_lane = StraightPath(0.0);
  const Path target_lane = StraightPath(kLaneWidth);
  scene.route = target_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0, Instruction::kChangeLeft, {}, {}, {}};
  DriverParams p;
  p.desired_speed = v_lim;

  const Path pos_path = ShiftPath(0.0, kLaneWidth, v0 * start_delay, v0 * 3.0);
  b.positive = TrajectoryAlong(pos_path, PlanSpeed(pos_path, b.s0, v0, scene.obstacles, p, {}));
  // Keeps the closing lane and ends up stopped at the cones.
  b.negative = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, p, {}));
  // Late but clean merge ahead of the taper.
  const Path rec_path = ShiftPath(0.0, kLaneWidth, taper_x - 30.0, 20.0);
  DriverParams cautious = p;
  cautious.desired_speed = 0.8 * v_lim;
  b.recovery = TrajectoryAlong(rec_path, PlanSpeed(rec_path, b.s0, v0, scene.obstacles, cautious, {}));
  return b;
}

Built BuildStopSign(Rng& rng) {
  const double v_lim = rng.Uniform(8.0, 11.0);
  const double v0 = rng.Uniform(4.5, 6.5);
  const double line_x = rng.Uniform(14.0, 22.0);
  const int green_at = 3 + static_cast<int>(rng.Index(4));
  const int turn = static_cast<int>(rng.Index(3));  // 0 straight, 1 left, 2 right

  constexpr double kPlaza = 9.5;
  const double half = 0.5 * kLaneWidth;
  const double xi = line_x + 1.0 + kPlaza;
  Scene scene;
  scene.speed_limit = v_lim;
  scene.drivable_area.push_back(Rectangle(kRoadStart, kRoadEnd, -half, half));
  scene.drivable_area.push_back(Rectangle(xi - kPlaza, xi + kPlaza, -kPlaza, kPlaza));
  scene.drivable_area.push_back(Rectangle(xi - kLaneWidth, xi + kLaneWidth, -80.0, 80.0));
  scene.lanes.push_back(StraightLane(0.0, kRoadStart, kRoadEnd));
  scene.lanes.push_back(LaneFromPoints({{xi - half, 80.0}, {xi - half, -80.0}}, 5.0));
  scene.lanes.push_back(LaneFromPoints({{xi + half, -80.0}, {xi + half, 80.0}}, 5.0));

  const Path left_path = TurnPath(0.0, xi + half - 8.0, 8.0, true);
  const Path right_path = TurnPath(0.0, xi - half - 6.0, 6.0, false);
  auto connector = [&](const Path& path, double x_from) {
    std::vector<Vec2> pts;
    for (const Vec2& q : path.points()) {
      if (q.x >= x_from - 1e-9 && std::abs(q.y) <= kPlaza) pts.push_back(q);
    }
    return LaneFromPoints(pts, 1.0);
  };
  scene.lanes.push_back(connector(left_path, xi + half - 8.0));
  scene.lanes.push_back(connector(right_path, xi - half - 6.0));

  TrafficLight light;
  light.stop_line_start = {line_x, -half};
  light.stop_line_end = {line_x, half};
  for (int k = 0; k <= kHorizonSteps; ++k) {
    light.schedule.push_back(k < green_at ? LightState::kRed : LightState::kGreen);
  }
  scene.traffic_lights.push_back(light);

  const Path straight = StraightPath(0.0);
  const Path& path = turn == 1 ? left_path : (turn == 2 ? right_path : straight);
  scene.route = path.points();
  const Instruction instr = turn == 1   ? Instruction::kTurnLeft
                            : turn == 2 ? Instruction::kTurnRight
                                        : Instruction::kGoStraight;
  Built b{scene, path, -kRoadStart, v0, instr, {}, {}, {}};
  DriverParams p;
  p.desired_speed = turn == 0 ? v_lim : 4.5;
  const double stop_s = line_x - kRoadStart - 1.0;
  const TrafficLight lt = light;
  auto red_stop = [=](int k, double s) -> std::optional<double> {
    if (lt.StateAt(k + 1) == LightState::kRed && s < stop_s + 0.5) return stop_s;
    return std::nullopt;
  };
  b.positive = TrajectoryAlong(path, PlanSpeed(path, b.s0, v0, {}, p, red_stop));
  // Keeps waiting after the light turns green.
  b.negative = TrajectoryAlong(
      path, PlanSpeed(path, b.s0, v0, {}, p,
                      [=](int, double) -> std::optional<double> { return stop_s; }));
  DriverParams brisk = p;
  brisk.max_accel = 2.0;
  brisk.headway = 0.9;
  b.recovery = TrajectoryAlong(path, PlanSpeed(path, b.s0, v0, {}, brisk, red_stop));
  return b;
}

Built BuildCutIn(Rng& rng) {
  const double v_lim = rng.Uniform(10.0, 13.0);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const bool from_left = rng.Index(2) == 0;
  const double car_x = rng.Uniform(18.0, 26.0);
  const double car_speed = v0 - rng.Uniform(1.0, 3.0);

  const double side = from_left ? 1.0 : -1.0;
  Scene scene;
  scene.speed_limit = v_lim;
  scene.drivable_area.push_back(
      Rectangle(kRoadStart, kRoadEnd, -1.5 * kLaneWidth, 1.5 * kLaneWidth));
  for (double y : {-kLaneWidth, 0.0, kLaneWidth}) {
    scene.lanes.push_back(StraightLane(y, kRoadStart, kRoadEnd));
  }
  const double merge_len = 2.5 * car_speed;
  const Path car_path = ShiftPath(side * kLaneWidth, -side * kLaneWidth, car_x - 0.2 * merge_len,
                                  merge_len);
  scene.obstacles.push_back(PathObstacle(ObstacleKind::kVehicle, 4.6, 1.9, car_path,
                                         car_x - kRoadStart, car_speed, 0.0));
  const Path ego_lane = StraightPath(0.0);
  scene.route = ego_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0, Instruction::kGoStraight, {}, {}, {}};
  DriverParams p;
  p.desired_speed = v_lim;
  p.corridor_half_width = kEgoWidth / 2.0 + 1.2;
  b.positive = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, p, {}));
  // Notices the merge late and brakes hard.
  DriverParams late = p;
  late.corridor_half_width = 0.3;
  late.accel_floor = -4.5;
  late.max_accel_step = 4.0;
  b.negative = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, late, {}));
  // Yields by moving to the free lane on the other side.
  const Path rec_path = ShiftPath(0.0, -side * kLaneWidth, v0 * 0.5, v0 * 3.0);
  b.recovery = TrajectoryAlong(rec_path, PlanSpeed(rec_path, b.s0, v0, scene.obstacles, p, {}));
  return b;
}

Built BuildLeadBraking(Rng& rng) {
  const double v_lim = rng.Uniform(10.0, 14.0);
  const double v0 = rng.Uniform(0.75, 0.95) * v_lim;
  const double gap = rng.Uniform(18.0, 28.0);
  const double decel = rng.Uniform(1.5, 3.0);

  Scene scene;
  scene.speed_limit = v_lim;
  scene.drivable_area.push_back(
      Rectangle(kRoadStart, kRoadEnd, -0.5 * kLaneWidth, 1.5 * kLaneWidth));
  scene.lanes.push_back(StraightLane(0.0, kRoadStart, kRoadEnd));
  scene.lanes.push_back(StraightLane(kLaneWidth, kRoadStart, kRoadEnd));
  const Path ego_lane = StraightPath(0.0);
  scene.obstacles.push_back(PathObstacle(ObstacleKind::kVehicle, 4.6, 1.9, ego_lane,
                                         gap + kEgoLength - kRoadStart, v0, -decel));
  scene.route = ego_lane.points();

  Built b{scene, ego_lane, -kRoadStart, v0, Instruction::kGoStraight, {}, {}, {}};
  DriverParams p;
  p.desired_speed = v_lim;
  b.positive = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, p, {}));
  DriverParams late = p;
  late.react_after = 3;
  late.accel_floor = -4.5;
  late.max_accel_step = 4.0;
  b.negative = TrajectoryAlong(ego_lane, PlanSpeed(ego_lane, b.s0, v0, scene.obstacles, late, {}));
  const Path rec_path = ShiftPath(0.0, kLaneWidth, v0 * 0.5, v0 * 3.0);
  b.recovery = TrajectoryAlong(rec_path, PlanSpeed(rec_path, b.s0, v0, scene.obstacles, p, {}));
  return b;
}

}  // namespace

Scenario GenerateScenario(uint64_t seed, Archetype archetype, Label label) {
  Rng rng(MixSeed(seed, static_cast<uint64_t>(archetype)));
  Built b = [&] {
    switch (archetype) {
      case Archetype::kLaneChange: return BuildLaneChange(rng);
      case Archetype::kLaneBias: return BuildLaneBias(rng);
      case Archetype::kVru: return BuildVru(rng);
      case Archetype::kConstruction: return BuildConstruction(rng);
      case Archetype::kStopSign: return BuildStopSign(rng);
      case Archetype::kCutIn: return BuildCutIn(rng);
      case Archetype::kLeadBraking: break;
    }
    return BuildLeadBraking(rng);
  }();
  Scenario s;
  std::ostringstream id;
  id << ToString(archetype) << "-" << seed << "-" << ToString(label);
  s.id = id.str();
  s.scene = std::move(b.scene);
  std::vector<Vec2> route;
  for (size_t i = 0; i < s.scene.route.size(); i += 4) route.push_back(s.scene.route[i]);
  if (!(route.back() == s.scene.route.back())) route.push_back(s.scene.route.back());
  s.scene.route = std::move(route);
  s.ego_history = HistoryAlong(b.ego_path, b.s0, b.v0);
  s.label = label;
  s.instruction = b.instruction;
  s.archetype = archetype;
  switch (label) {
    case Label::kPositive: s.reference = std::move(b.positive); break;
    case Label::kNegative: s.reference = std::move(b.negative); break;
    case Label::kRecovery: s.reference = std::move(b.recovery); break;
  }
  s.reasoning_tags = TagsFor(s.reference);
  return s;
}

std::optional<std::string> ValidateScenario(const Scenario& s) {
  if (s.ego_history.size() != kHistorySteps + 1) return "history length";
  if (s.reference.size() != kHorizonSteps + 1) return "reference length";
  if (!s.ego_history.AllFinite() || !s.reference.AllFinite()) return "non-finite pose";
  if (!(s.reference.dt > 0.0)) return "non-positive dt";
  const double start_gap = Norm(s.reference.waypoints.front().position() -
                                s.ego_history.waypoints.back().position());
  if (start_gap > 0.5) return "reference does not start at the ego pose";
  for (const auto& poly : s.scene.drivable_area) {
    if (!IsSimplePolygon(poly)) return "self-intersecting drivable polygon";
  }
  for (const Obstacle& o : s.scene.obstacles) {
    if (o.trajectory.dt != s.reference.dt) return "obstacle dt differs from ego dt";
    if (o.trajectory.empty()) return "obstacle without trajectory";
  }
  for (const TrafficLight& light : s.scene.traffic_lights) {
    bool hits = false;
    for (const LaneCenterline& lane : s.scene.lanes) {
      for (size_t i = 0; i + 1 < lane.points.size() && !hits; ++i) {
        hits = SegmentsIntersect(light.stop_line_start, light.stop_line_end,
                                 lane.points[i], lane.points[i + 1]);
      }
    }
    if (!hits) return "stop line crosses no lane";
  }
  for (const LaneCenterline& lane : s.scene.lanes) {
    if (lane.points.size() < 2 || lane.points.size() != lane.directions.size())
      return "malformed lane";
  }
  if (s.scene.route.size() < 2) return "route too short";
  return std::nullopt;
}

}  // namespace driveflow
