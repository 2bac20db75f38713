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

#include "driveflow/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace driveflow {

double Dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double Cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double Norm(Vec2 a) { return std::hypot(a.x, a.y); }

double NormalizeAngle(double angle) {
  double a = std::fmod(angle, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

Vec2 Rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

std::array<Vec2, 4> OrientedBox::Corners() const {
  const Vec2 f = Rotate({0.5 * length, 0.0}, heading);
  const Vec2 l = Rotate({0.0, 0.5 * width}, heading);
  return {center + f + l, center - f + l, center - f - l, center + f - l};
}

namespace {

void ProjectOnAxis(const std::array<Vec2, 4>& pts, Vec2 axis, double& lo,
                   double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const Vec2& p : pts) {
    const double d = Dot(p, axis);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
}

}  // namespace

bool BoxesOverlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.Corners();
  const auto cb = b.Corners();
  const std::array<Vec2, 4> axes = {
      Rotate({1, 0}, a.heading), Rotate({0, 1}, a.heading),
      Rotate({1, 0}, b.heading), Rotate({0, 1}, b.heading)};
  for (const Vec2& axis : axes) {
    double lo_a, hi_a, lo_b, hi_b;
    ProjectOnAxis(ca, axis, lo_a, hi_a);
    ProjectOnAxis(cb, axis, lo_b, hi_b);
    if (hi_a < lo_b || hi_b < lo_a) return false;
  }
  return true;
}

namespace {

bool OnSegment(Vec2 p, Vec2 a, Vec2 b) {
  constexpr double kEps = 1e-12;
  if (std::abs(Cross(b - a, p - a)) > kEps * std::max(1.0, Norm(b - a)))
    return false;
  return Dot(p - a, p - b) <= kEps;
}

}  // namespace

bool PointInPolygon(Vec2 p, std::span<const Vec2> polygon) {
  const size_t n = polygon.size();
  if (n < 3) return false;
  bool inside = false;
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = polygon[i];
    const Vec2 b = polygon[j];
    if (OnSegment(p, a, b)) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool SegmentsIntersect(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
  const double d1 = Cross(a1 - a0, b0 - a0);
  const double d2 = Cross(a1 - a0, b1 - a0);
  const double d3 = Cross(b1 - b0, a0 - b0);
  const double d4 = Cross(b1 - b0, a1 - b0);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && OnSegment(b0, a0, a1)) return true;
  if (d2 == 0 && OnSegment(b1, a0, a1)) return true;
  if (d3 == 0 && OnSegment(a0, b0, b1)) return true;
  if (d4 == 0 && OnSegment(a1, b0, b1)) return true;
  return false;
}

bool IsSimplePolygon(std::span<const Vec2> polygon) {
  const size_t n = polygon.size();
  if (n < 3) return false;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (SegmentsIntersect(polygon[i], polygon[(i + 1) % n], polygon[j],
                            polygon[(j + 1) % n]))
        return false;
    }
  }
  return true;
}

PolylineProjection ProjectOntoPolyline(Vec2 p, std::span<const Vec2> line) {
  if (line.size() < 2) {
    throw std::invalid_argument("polyline projection needs >= 2 points");
  }
  PolylineProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  double arc = 0.0;
  for (size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 a = line[i];
    const Vec2 d = line[i + 1] - a;
    const double len2 = Dot(d, d);
    const double len = std::sqrt(len2);
    double u = len2 > 0.0 ? Dot(p - a, d) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    const Vec2 foot = a + u * d;
    const double dist = Norm(p - foot);
    if (dist < best.distance) {
      best.distance = dist;
      best.arc_length = arc + u * len;
      best.segment = static_cast<int>(i);
      best.direction = std::atan2(d.y, d.x);
      const double side = len > 0.0 ? Cross(d, p - a) / len : 0.0;
      best.lateral = side >= 0.0 ? dist : -dist;
    }
    arc += len;
  }
  return best;
}

double PolylineLength(std::span<const Vec2> line) {
  double total = 0.0;
  for (size_t i = 0; i + 1 < line.size(); ++i) total += Norm(line[i + 1] - line[i]);
  return total;
}

Vec2 PointAlongPolyline(std::span<const Vec2> line, double s) {
  if (line.empty()) throw std::invalid_argument("empty polyline");
  if (s <= 0.0 || line.size() == 1) return line.front();
  double arc = 0.0;
  for (size_t i = 0; i + 1 < line.size(); ++i) {
    const double len = Norm(line[i + 1] - line[i]);
    if (arc + len >= s && len > 0.0) {
      const double u = (s - arc) / len;
      return line[i] + u * (line[i + 1] - line[i]);
    }
    arc += len;
  }
  return line.back();
}

}  // namespace driveflow
