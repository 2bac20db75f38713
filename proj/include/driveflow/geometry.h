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

#ifndef DRIVEFLOW_GEOMETRY_H_
#define DRIVEFLOW_GEOMETRY_H_

#include <array>
#include <span>
#include <vector>

namespace driveflow {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

double Dot(Vec2 a, Vec2 b);
double Cross(Vec2 a, Vec2 b);
double Norm(Vec2 a);

// Wraps an angle into (-pi, pi].
double NormalizeAngle(double angle);

// Rotates `v` counter-clockwise by `angle`.
Vec2 Rotate(Vec2 v, double angle);

// Oriented rectangle; length runs along the heading.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> Corners() const;
};

// Separating-axis test. Touching boxes count as overlapping.
bool BoxesOverlap(const OrientedBox& a, const OrientedBox& b);

// Even-odd rule; points on the boundary count as inside.
bool PointInPolygon(Vec2 p, std::span<const Vec2> polygon);

bool SegmentsIntersect(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1);

// True when no two non-adjacent edges intersect.
bool IsSimplePolygon(std::span<const Vec2> polygon);

struct PolylineProjection {
  double arc_length = 0.0;   // along the polyline to the foot point
  double lateral = 0.0;      // signed, positive to the left of travel
  double distance = 0.0;     // unsigned distance to the foot point
  int segment = 0;
  double direction = 0.0;    // heading of the segment at the foot point
};

// Projects onto the closest segment. Requires >= 2 points.
PolylineProjection ProjectOntoPolyline(Vec2 p, std::span<const Vec2> line);

double PolylineLength(std::span<const Vec2> line);

// Point at arc length `s` (clamped to the ends).
Vec2 PointAlongPolyline(std::span<const Vec2> line, double s);

}  // namespace driveflow

#endif  // DRIVEFLOW_GEOMETRY_H_
