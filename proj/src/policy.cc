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

#include "driveflow/policy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace driveflow {
namespace {

constexpr double kHeadingWeight = 5.0;  // meters per radian in k-means
constexpr double kActionScale = 10.0;   // meters

double MotionDistance(const Motion& a, const Motion& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dh = kHeadingWeight * (a[2] - b[2]);
  return dx * dx + dy * dy + dh * dh;
}

int NearestCentroid(const ActionCodebook& cb, const Motion& m) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cb.size(); ++i) {
    const double d = MotionDistance(cb.centroids[i], m);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Waypoint Advance(const Waypoint& pose, const Motion& m) {
  const Vec2 p = pose.position() + Rotate({m[0], m[1]}, pose.heading);
  return {p.x, p.y, NormalizeAngle(pose.heading + m[2])};
}

Motion RelativeMotion(const Waypoint& from, const Waypoint& to) {
  const Vec2 d = Rotate(to.position() - from.position(), -from.heading);
  return {d.x, d.y, NormalizeAngle(to.heading - from.heading)};
}

}  // namespace

void ValidatePolicyConfig(const PolicyConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("policy config: " + m); };
  if (c.d_model <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.d_bridge <= 0) fail("non-positive size");
  if (c.d_model % c.n_heads != 0) fail("d_model not divisible by n_heads");
  if (c.d_bridge % c.n_heads != 0) fail("d_bridge not divisible by n_heads");
  if (c.horizon <= 0 || c.n_queries <= 0 || c.horizon % c.n_queries != 0)
    fail("horizon must be a positive multiple of n_queries");
  if (c.codebook_size < 2) fail("codebook_size < 2");
  if (c.max_context <= 0 || c.max_reason < 0) fail("bad context/reason limits");
  if (c.sparse_interval < 1 || c.sparse_interval > c.n_layers) fail("sparse_interval out of range");
  if (c.flow_steps < 1) fail("flow_steps < 1");
  if (c.noise_std < 0.0) fail("noise_std < 0");
  if (c.ff_mult <= 0 || c.history_hidden <= 0) fail("non-positive hidden size");
}

std::vector<int> SelectSparseLayers(int n_layers, int interval) {
  if (n_layers < 1 || interval < 1 || interval > n_layers) {
    throw std::invalid_argument("select_sparse_layers: interval " + std::to_string(interval) +
                                " outside [1, " + std::to_string(n_layers) + "]");
  }
  std::vector<int> out;
  for (int i = interval - 1; i < n_layers; i += interval) out.push_back(i);
  if (out.empty() || out.back() != n_layers - 1) out.push_back(n_layers - 1);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Codebook.

std::vector<Motion> ExtractMotions(const Trajectory& traj) {
  std::vector<Motion> out;
  for (size_t i = 0; i + 1 < traj.size(); ++i) {
    out.push_back(RelativeMotion(traj.waypoints[i], traj.waypoints[i + 1]));
  }
  return out;
}

ActionCodebook FitCodebook(const std::vector<Motion>& motions, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("fit_codebook: K must be >= 2");
  std::vector<Motion> distinct = motions;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const Motion zero{0.0, 0.0, 0.0};
  std::vector<Motion> points;
  for (const Motion& m : distinct) {
    if (m != zero) points.push_back(m);
  }
  if (static_cast<int>(distinct.size()) < k || static_cast<int>(points.size()) < k - 1) {
    throw std::invalid_argument("fit_codebook: K = " + std::to_string(k) + " exceeds " +
                                std::to_string(distinct.size()) + " distinct motions");
  }
  const int n_clusters = k - 1;
  Rng rng(seed);
  // k-means++ seeding.
  std::vector<Motion> centers;
  centers.push_back(points[rng.Index(points.size())]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < n_clusters) {
    double total = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], MotionDistance(points[i], centers.back()));
      total += d2[i];
    }
    double r = rng.Uniform() * total;
    size_t pick = points.size() - 1;
    for (size_t i = 0; i < points.size(); ++i) {
      r -= d2[i];
      if (r < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(points[pick]);
  }
  std::vector<int> assign(points.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < n_clusters; ++c) {
        const double d = MotionDistance(points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<Motion> sum(n_clusters, zero);
    std::vector<int> count(n_clusters, 0);
    for (size_t i = 0; i < points.size(); ++i) {
      for (int a = 0; a < 3; ++a) sum[assign[i]][a] += points[i][a];
      ++count[assign[i]];
    }
    for (int c = 0; c < n_clusters; ++c) {
      if (count[c] == 0) continue;
      for (int a = 0; a < 3; ++a) centers[c][a] = sum[c][a] / count[c];
    }
    if (!changed) break;
  }
  ActionCodebook cb;
  cb.seed = seed;
  cb.centroids.push_back(zero);
  std::sort(centers.begin(), centers.end());
  for (const Motion& c : centers) {
    if (c == zero || c == cb.centroids.back()) continue;
    cb.centroids.push_back(c);
  }
  // Duplicates collapse; refill with unused data points to keep K entries.
  for (size_t i = 0; static_cast<int>(cb.centroids.size()) < k && i < points.size(); ++i) {
    if (std::find(cb.centroids.begin(), cb.centroids.end(), points[i]) == cb.centroids.end())
      cb.centroids.push_back(points[i]);
  }
  return cb;
}

std::vector<int> Tokenize(const ActionCodebook& codebook, const Trajectory& traj) {
  if (codebook.size() < 1) throw std::invalid_argument("tokenize: empty codebook");
  std::vector<int> tokens;
  if (traj.empty()) return tokens;
  Waypoint pose = traj.waypoints.front();
  for (size_t i = 1; i < traj.size(); ++i) {
    const int t = NearestCentroid(codebook, RelativeMotion(pose, traj.waypoints[i]));
    tokens.push_back(t);
    pose = Advance(pose, codebook.centroids[t]);
  }
  return tokens;
}

Trajectory Detokenize(const ActionCodebook& codebook, const std::vector<int>& tokens,
                      const Waypoint& start, double dt, int t0) {
  Trajectory out;
  out.dt = dt;
  out.t0 = t0;
  out.waypoints.push_back(start);
  Waypoint pose = start;
  for (int t : tokens) {
    if (t < 0 || t >= codebook.size()) {
      throw std::invalid_argument("detokenize: token " + std::to_string(t) + " out of range");
    }
    pose = Advance(pose, codebook.centroids[t]);
    out.waypoints.push_back(pose);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grammar.

std::vector<bool> GrammarAllowed(const Vocabulary& vocab, const std::vector<int>& prefix,
                                 int horizon, int max_reason) {
  std::vector<bool> allowed(vocab.size(), false);
  int n_reason = 0;
  int n_action = 0;
  bool started = false;
  for (int t : prefix) {
    if (t == vocab.eos()) return std::vector<bool>(vocab.size(), false);
    if (t == vocab.action_start()) started = true;
    else if (vocab.is_reason(t)) ++n_reason;
    else if (vocab.is_codebook(t)) ++n_action;
  }
  if (!started) {
    if (n_reason < max_reason) {
      for (int l = 0; l < kNumLateral; ++l) allowed[vocab.reason(static_cast<Lateral>(l))] = true;
    }
    allowed[vocab.action_start()] = true;
  } else if (n_action < horizon) {
    for (int i = 0; i < vocab.codebook_size; ++i) allowed[i] = true;
  } else {
    allowed[vocab.eos()] = true;
  }
  return allowed;
}

bool IsGrammatical(const Vocabulary& vocab, const std::vector<int>& tokens, int horizon,
                   int max_reason) {
  std::vector<int> prefix;
  for (int t : tokens) {
    if (t < 0 || t >= vocab.size()) return false;
    const std::vector<bool> allowed = GrammarAllowed(vocab, prefix, horizon, max_reason);
    if (!allowed[t]) return false;
    prefix.push_back(t);
  }
  return !prefix.empty() && prefix.back() == vocab.eos();
}

std::vector<int> TargetSequence(const Vocabulary& vocab, const std::vector<Lateral>& tags,
                                const std::vector<int>& action_tokens) {
  std::vector<int> seq;
  for (Lateral l : tags) seq.push_back(vocab.reason(l));
  seq.push_back(vocab.action_start());
  seq.insert(seq.end(), action_tokens.begin(), action_tokens.end());
  seq.push_back(vocab.eos());
  return seq;
}

ParsedSequence ParseSequence(const Vocabulary& vocab, const std::vector<int>& tokens,
                             int horizon, int max_reason) {
  if (!IsGrammatical(vocab, tokens, horizon, max_reason)) {
    throw std::invalid_argument("token sequence violates the output grammar");
  }
  ParsedSequence out;
  for (int t : tokens) {
    if (vocab.is_reason(t)) out.reasons.push_back(vocab.lateral(t));
    if (vocab.is_codebook(t)) out.actions.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Context features.

int ContextTokens::num_valid() const {
  return static_cast<int>(std::count(valid.begin(), valid.end(), true));
}

Waypoint CurrentPose(const Scenario& scenario) {
  if (scenario.ego_history.empty()) throw std::invalid_argument("scenario without history");
  return scenario.ego_history.waypoints.back();
}

Mat HistoryFeatures(const Trajectory& history) {
  if (history.size() != kHistorySteps + 1) {
    throw std::invalid_argument("history must have " + std::to_string(kHistorySteps + 1) +
                                " poses");
  }
  const Trajectory local = ToLocalFrame(history, history.waypoints.back());
  Mat f(1, kHistoryFeatures);
  for (int k = 0; k <= kHistorySteps; ++k) {
    const Waypoint& w = local.waypoints[k];
    f(0, 4 * k) = w.x;
    f(0, 4 * k + 1) = w.y;
    f(0, 4 * k + 2) = std::cos(w.heading);
    f(0, 4 * k + 3) = std::sin(w.heading);
  }
  return f;
}

namespace {

struct FeatureBuilder {
  std::vector<std::vector<double>> rows;

  void Add(ContextType type, std::initializer_list<double> payload) {
    std::vector<double> row(kContextFeatures, 0.0);
    row[static_cast<int>(type)] = 1.0;
    int i = kNumContextTypes;
    for (double v : payload) {
      if (i >= kContextFeatures) throw std::logic_error("context payload too long");
      row[i++] = v;
    }
    rows.push_back(std::move(row));
  }
};

bool Drivable(const Scene& scene, Vec2 p) {
  for (const auto& poly : scene.drivable_area) {
    if (PointInPolygon(p, poly)) return true;
  }
  return false;
}

double FreeDistance(const Scene& scene, Vec2 from, Vec2 dir, double cap) {
  double d = 0.0;
  while (d < cap && Drivable(scene, from + (d + 0.25) * dir)) d += 0.25;
  return d;
}

}  // namespace

ContextTokens EncodeContextFeatures(const Scenario& scenario, int max_context) {
  const Scene& scene = scenario.scene;
  const Waypoint ego = CurrentPose(scenario);
  const double c = std::cos(ego.heading), s = std::sin(ego.heading);
  auto local = [&](Vec2 p) { return Rotate(p - ego.position(), -ego.heading); };
  auto world = [&](Vec2 p) { return ego.position() + Rotate(p, ego.heading); };
  FeatureBuilder fb;

  // Ego history.
  const Trajectory hist = ToLocalFrame(scenario.ego_history, ego);
  const std::vector<double> speeds = ChordSpeeds(scenario.ego_history);
  for (size_t k = 0; k < hist.size(); ++k) {
    const Waypoint& w = hist.waypoints[k];
    const double v = speeds.empty() ? 0.0 : speeds[k == 0 ? 0 : std::min(k - 1, speeds.size() - 1)];
    const double a = speeds.size() >= 2 ? (speeds.back() - speeds[speeds.size() - 2]) / hist.dt : 0.0;
    fb.Add(ContextType::kEgo,
           {w.x / 20.0, w.y / 20.0, std::cos(w.heading), std::sin(w.heading), v / 10.0,
            (static_cast<double>(k) - kHistorySteps) * hist.dt / 2.0, scene.speed_limit / 10.0,
            a / 3.0});
  }
  {
    std::vector<double> one_hot(kNumInstructions, 0.0);
    one_hot[static_cast<int>(scenario.instruction)] = 1.0;
    fb.Add(ContextType::kInstruction,
           {one_hot[0], one_hot[1], one_hot[2], one_hot[3], one_hot[4], one_hot[5]});
  }
  // Nearest obstacles that are not far behind.
  std::vector<std::pair<double, size_t>> order;
  for (size_t i = 0; i < scene.obstacles.size(); ++i) {
    const Vec2 p = local(ObstaclePoseAt(scene.obstacles[i], 0).position());
    if (p.x < -10.0 || Norm(p) > 80.0) continue;
    order.push_back({Norm(p), i});
  }
  std::sort(order.begin(), order.end());
  for (size_t j = 0; j < order.size() && j < 6; ++j) {
    const Obstacle& o = scene.obstacles[order[j].second];
    const Waypoint w0 = ObstaclePoseAt(o, 0), w1 = ObstaclePoseAt(o, 1), w2 = ObstaclePoseAt(o, 2);
    const Vec2 p = local(w0.position());
    const Vec2 vel = Rotate((1.0 / o.trajectory.dt) * (w1.position() - w0.position()), -ego.heading);
    const double v01 = Norm(w1.position() - w0.position()) / o.trajectory.dt;
    const double v12 = Norm(w2.position() - w1.position()) / o.trajectory.dt;
    const double h = NormalizeAngle(w0.heading - ego.heading);
    fb.Add(ContextType::kObstacle,
           {p.x / 20.0, p.y / 20.0, std::cos(h), std::sin(h), vel.x / 10.0, vel.y / 10.0,
            (v12 - v01) / o.trajectory.dt / 3.0, o.length / 5.0, o.width / 5.0,
            o.kind == ObstacleKind::kVehicle ? 1.0 : 0.0,
            o.kind == ObstacleKind::kPedestrian ? 1.0 : 0.0,
            o.kind == ObstacleKind::kCone ? 1.0 : 0.0});
  }
  // Route samples ahead.
  if (scene.route.size() >= 2) {
    const double s0 = ProjectOntoPolyline(ego.position(), scene.route).arc_length;
    for (int i = 0; i < 6; ++i) {
      const double ds = 8.0 * i;
      const Vec2 p = PointAlongPolyline(scene.route, s0 + ds);
      const Vec2 q = PointAlongPolyline(scene.route, s0 + ds + 1.0);
      const Vec2 lp = local(p);
      const double dir = std::atan2(q.y - p.y, q.x - p.x) - ego.heading;
      fb.Add(ContextType::kRoute,
             {lp.x / 20.0, lp.y / 20.0, std::cos(dir), std::sin(dir), ds / 40.0});
    }
  }
  // Free space left and right at points ahead.
  const Vec2 fwd{c, s};
  const Vec2 left{-s, c};
  for (int i = 0; i < 6; ++i) {
    const double d = 8.0 * i;
    const Vec2 p = ego.position() + d * fwd;
    fb.Add(ContextType::kBoundary,
           {FreeDistance(scene, p, left, 8.0) / 8.0,
            FreeDistance(scene, p, -1.0 * left, 8.0) / 8.0, d / 40.0,
            Drivable(scene, p) ? 1.0 : 0.0});
  }
  // Nearest lanes.
  std::vector<std::pair<double, size_t>> lanes;
  for (size_t i = 0; i < scene.lanes.size(); ++i) {
    if (scene.lanes[i].points.size() < 2) continue;
    lanes.push_back({ProjectOntoPolyline(ego.position(), scene.lanes[i].points).distance, i});
  }
  std::sort(lanes.begin(), lanes.end());
  for (size_t j = 0; j < lanes.size() && j < 3; ++j) {
    const auto& pts = scene.lanes[lanes[j].second].points;
    double feats[3];
    double exists = 1.0;
    double dir = 0.0;
    for (int k = 0; k < 3; ++k) {
      const Vec2 q = world({15.0 * k, 0.0});
      const PolylineProjection proj = ProjectOntoPolyline(q, pts);
      const Vec2 foot = PointAlongPolyline(pts, proj.arc_length);
      feats[k] = local(foot).y / 10.0;
      if (k == 0) dir = proj.direction - ego.heading;
      if (k == 2 && proj.distance > 5.0) exists = 0.0;
    }
    fb.Add(ContextType::kLane, {feats[0], feats[1], feats[2], exists, std::cos(dir), std::sin(dir)});
  }
  // Traffic light.
  for (const TrafficLight& light : scene.traffic_lights) {
    const Vec2 mid = 0.5 * (light.stop_line_start + light.stop_line_end);
    const Vec2 lp = local(mid);
    int to_green = 0;
    while (to_green < 20 && light.StateAt(to_green) == LightState::kRed) ++to_green;
    fb.Add(ContextType::kLight,
           {lp.x / 20.0, lp.y / 20.0, light.StateAt(0) == LightState::kRed ? 1.0 : 0.0,
            to_green / 10.0});
  }
  const int n = static_cast<int>(fb.rows.size());
  if (n > max_context) {
    throw std::invalid_argument("context overflow: " + std::to_string(n) + " tokens > max " +
                                std::to_string(max_context));
  }
  ContextTokens out;
  out.features.resize(n, kContextFeatures);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kContextFeatures; ++j) out.features(i, j) = fb.rows[i][j];
  }
  out.valid.assign(n, true);
  return out;
}

ContextTokens PadContext(const ContextTokens& tokens, int length) {
  if (length < tokens.length()) throw std::invalid_argument("pad_context: shorter than input");
  ContextTokens out;
  out.features = Mat::Zero(length, kContextFeatures);
  out.features.topRows(tokens.length()) = tokens.features;
  out.valid = tokens.valid;
  out.valid.resize(length, false);
  return out;
}

// ---------------------------------------------------------------------------
// Flow primitives.

double SampleTau(Rng& rng, double shift) {
  const double z = rng.Normal() + shift;
  double tau = 1.0 / (1.0 + std::exp(-z));
  // Keep the draw strictly inside (0, 1).
  tau = std::clamp(tau, 1e-12, 1.0 - 1e-12);
  return tau;
}

double SampleTau(uint64_t seed, double shift) {
  Rng rng(seed);
  return SampleTau(rng, shift);
}

Mat FmInterpolate(const Mat& a, const Mat& a_his, double tau) {
  if (a.rows() != a_his.rows() || a.cols() != a_his.cols()) {
    throw std::invalid_argument("fm_interpolate: shape mismatch");
  }
  if (tau == 0.0) return a_his;
  if (tau == 1.0) return a;
  return tau * a + (1.0 - tau) * a_his;
}

std::optional<Mat> FmIntegrate(const VectorField& field, const Mat& a_his, int steps) {
  if (steps < 1) throw std::invalid_argument("fm_sample: steps must be >= 1");
  Mat a = a_his;
  const double dtau = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const Mat v = field(a, static_cast<double>(k) / steps);
    if (v.rows() != a.rows() || v.cols() != a.cols()) {
      throw std::invalid_argument("fm_sample: field shape mismatch");
    }
    a += dtau * v;
    if (!a.allFinite()) return std::nullopt;
  }
  return a;
}

Trajectory OffsetsToTrajectory(const Mat& offsets, const Waypoint& origin, double dt) {
  Trajectory t;
  t.dt = dt;
  t.t0 = 0;
  t.waypoints.push_back(origin);
  std::vector<Vec2> pts{origin.position()};
  for (Eigen::Index i = 0; i < offsets.rows(); ++i) {
    pts.push_back(origin.position() + Rotate({offsets(i, 0), offsets(i, 1)}, origin.heading));
  }
  double heading = origin.heading;
  for (size_t i = 1; i < pts.size(); ++i) {
    const Vec2 d = pts[i] - pts[i - 1];
    if (Norm(d) > 1e-3) heading = std::atan2(d.y, d.x);
    t.waypoints.push_back({pts[i].x, pts[i].y, heading});
  }
  return t;
}

Mat TrajectoryToOffsets(const Trajectory& traj, const Waypoint& origin, int horizon) {
  if (static_cast<int>(traj.size()) < horizon + 1) {
    throw std::invalid_argument("trajectory shorter than the horizon");
  }
  Mat out(horizon, 2);
  for (int i = 0; i < horizon; ++i) {
    const Vec2 p = Rotate(traj.waypoints[i + 1].position() - origin.position(), -origin.heading);
    out(i, 0) = p.x;
    out(i, 1) = p.y;
  }
  return out;
}

Mat SinusoidalEmbedding(const std::vector<double>& positions, int dim, double max_period) {
  Mat out(static_cast<Eigen::Index>(positions.size()), dim);
  const int half = dim / 2;
  for (size_t r = 0; r < positions.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(max_period) * i / std::max(1, half));
      out(r, i) = std::sin(positions[r] * freq);
      out(r, half + i) = std::cos(positions[r] * freq);
    }
    if (dim % 2) out(r, dim - 1) = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy.

Policy::Policy(const PolicyConfig& config, uint64_t seed)
    : config_(config), params_(seed) {
  ValidatePolicyConfig(config_);
  vocab_.codebook_size = config_.codebook_size;
  sparse_layers_ = SelectSparseLayers(config_.n_layers, config_.sparse_interval);
  CreateParams(seed);
}

void Policy::set_codebook(ActionCodebook codebook) {
  if (codebook.size() != config_.codebook_size) {
    throw std::invalid_argument("codebook size " + std::to_string(codebook.size()) +
                                " does not match config " + std::to_string(config_.codebook_size));
  }
  codebook_ = std::move(codebook);
}

void Policy::CreateParams(uint64_t) {
  const int d = config_.d_model;
  const int hd = config_.ff_mult * d;
  const int db = config_.d_bridge;
  const int hb = config_.ff_mult * db;
  const int chunk = config_.horizon / config_.n_queries;
  auto ln = [&](const std::string& p, int width) {
    params_.Create(p + "/g", 1, width, Init::kOnes);
    params_.Create(p + "/b", 1, width, Init::kZeros);
  };
  params_.Create("backbone/ctx_in/w", kContextFeatures, d);
  params_.Create("backbone/ctx_in/b", 1, d, Init::kZeros);
  params_.Create("backbone/tok_embed", vocab_.size() + 1, d) *=
      std::sqrt(static_cast<double>(vocab_.size() + 1)) / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "backbone/l" + std::to_string(l);
    ln(p + "/ln1", d);
    for (const char* w : {"/attn/wq", "/attn/wk", "/attn/wv", "/attn/wo"}) params_.Create(p + w, d, d);
    ln(p + "/ln2", d);
    params_.Create(p + "/mlp/gate", d, hd);
    params_.Create(p + "/mlp/up", d, hd);
    params_.Create(p + "/mlp/down", hd, d);
  }
  ln("head/ln", d);
  params_.Create("head/out/w", d, vocab_.size());
  params_.Create("head/out/b", 1, vocab_.size(), Init::kZeros);

  // History embedding: a linear skip path set to constant-velocity
  // extrapolation plus a two-layer perceptron whose anchor output starts at
  // zero.
  const int h = config_.history_hidden;
  Mat& skip = params_.Create("history/skip", kHistoryFeatures, 2 * config_.horizon, Init::kZeros);
  const int prev = 4 * (kHistorySteps - 1);
  const int cur = 4 * kHistorySteps;
  for (int k = 1; k <= config_.horizon; ++k) {
    skip(prev, 2 * (k - 1)) = -k;
    skip(prev + 1, 2 * (k - 1) + 1) = -k;
    skip(cur, 2 * (k - 1)) = k + 1;
    skip(cur + 1, 2 * (k - 1) + 1) = k + 1;
  }
  params_.Create("history/w1", kHistoryFeatures, h);
  params_.Create("history/b1", 1, h, Init::kZeros);
  params_.Create("history/anchor", h, 2 * config_.horizon, Init::kZeros);
  params_.Create("history/query/w", h, config_.n_queries * db);
  params_.Create("history/query/b", 1, config_.n_queries * db, Init::kZeros);

  params_.Create("bridge/a_in/w", 2 * chunk, db);
  params_.Create("bridge/a_in/b", 1, db, Init::kZeros);
  params_.Create("bridge/time/w1", db, db);
  params_.Create("bridge/time/b1", 1, db, Init::kZeros);
  params_.Create("bridge/time/w2", db, db);
  params_.Create("bridge/time/b2", 1, db, Init::kZeros);
  for (size_t j = 0; j < sparse_layers_.size(); ++j) {
    const std::string p = "bridge/b" + std::to_string(j);
    ln(p + "/ln1", db);
    for (const char* w : {"/self/wq", "/self/wk", "/self/wv", "/self/wo"}) params_.Create(p + w, db, db);
    ln(p + "/ln2", db);
    params_.Create(p + "/cross/wq", db, db);
    params_.Create(p + "/cross/wk", d, db);
    params_.Create(p + "/cross/wv", d, db);
    params_.Create(p + "/cross/wo", db, db);
    ln(p + "/ln3", db);
    params_.Create(p + "/mlp/gate", db, hb);
    params_.Create(p + "/mlp/up", db, hb);
    params_.Create(p + "/mlp/down", hb, db);
  }
  ln("bridge/out/ln", db);
  params_.Create("bridge/out/w", db, 2 * chunk) *= 0.1;
  params_.Create("bridge/out/b", 1, 2 * chunk, Init::kZeros);
}

Var Policy::EmbedContext(Tape& tape, const ContextTokens& ctx) const {
  if (ctx.features.cols() != kContextFeatures) {
    throw std::invalid_argument("context features have " + std::to_string(ctx.features.cols()) +
                                " columns, expected " + std::to_string(kContextFeatures));
  }
  return Affine(tape.Constant(ctx.features, "context"), Param(tape, "backbone/ctx_in/w"),
                Param(tape, "backbone/ctx_in/b"));
}

Var Policy::EmbedTokens(Tape& tape, const std::vector<int>& ids, int first_position) const {
  std::vector<int> pos(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) pos[i] = first_position + static_cast<int>(i);
  return EmbedTokens(tape, ids, pos);
}

Var Policy::EmbedTokens(Tape& tape, const std::vector<int>& ids,
                        const std::vector<int>& positions) const {
  std::vector<double> p(positions.begin(), positions.end());
  Var e = EmbeddingLookup(Param(tape, "backbone/tok_embed"), ids);
  return Add(e, tape.Constant(SinusoidalEmbedding(p, config_.d_model, 1000.0), "positions"));
}

Var Policy::Backbone(Tape& tape, Var x, const BoolMat& mask, LayerCaches& caches) const {
  const int past = caches.length;
  if (mask.rows() != x.rows() || mask.cols() != past + x.rows()) {
    throw std::invalid_argument("backbone: mask shape does not match inputs");
  }
  if (caches.k.empty()) {
    caches.k.resize(config_.n_layers);
    caches.v.resize(config_.n_layers);
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "backbone/l" + std::to_string(l);
    Var h = LayerNorm(x, Param(tape, p + "/ln1/g"), Param(tape, p + "/ln1/b"));
    Var q = MatMul(h, Param(tape, p + "/attn/wq"));
    Var k = MatMul(h, Param(tape, p + "/attn/wk"));
    Var v = MatMul(h, Param(tape, p + "/attn/wv"));
    if (past > 0) {
      k = ConcatRows({caches.k[l], k});
      v = ConcatRows({caches.v[l], v});
    }
    caches.k[l] = k;
    caches.v[l] = v;
    Var a = Attention(q, k, v, config_.n_heads, &mask);
    x = Add(x, MatMul(a, Param(tape, p + "/attn/wo")));
    Var h2 = LayerNorm(x, Param(tape, p + "/ln2/g"), Param(tape, p + "/ln2/b"));
    x = Add(x, GatedMlp(h2, Param(tape, p + "/mlp/gate"), Param(tape, p + "/mlp/up"),
                        Param(tape, p + "/mlp/down")));
  }
  caches.length = past + static_cast<int>(x.rows());
  return x;
}

Var Policy::Head(Tape& tape, Var hidden) const {
  Var h = LayerNorm(hidden, Param(tape, "head/ln/g"), Param(tape, "head/ln/b"));
  return Affine(h, Param(tape, "head/out/w"), Param(tape, "head/out/b"));
}

LayerCaches Policy::EncodeContext(Tape& tape, const ContextTokens& ctx) const {
  const int n = ctx.length();
  BoolMat mask(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) mask(i, j) = ctx.valid[j];
  }
  LayerCaches caches;
  Backbone(tape, EmbedContext(tape, ctx), mask, caches);
  return caches;
}

Var Policy::Prefill(Tape& tape, const ContextTokens& ctx, const std::vector<int>& inputs,
                    LayerCaches& caches) const {
  const int nc = ctx.length();
  const int ng = static_cast<int>(inputs.size());
  const int n = nc + ng;
  BoolMat mask = BoolMat::Constant(n, n, false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nc; ++j) mask(i, j) = ctx.valid[j];
    if (i >= nc) {
      for (int j = nc; j <= i; ++j) mask(i, j) = true;
    }
  }
  Var x = ConcatRows({EmbedContext(tape, ctx), EmbedTokens(tape, inputs, 0)});
  caches = LayerCaches{};
  Var hidden = Backbone(tape, x, mask, caches);
  return SliceRows(hidden, nc, ng);
}

Var Policy::SequenceLogits(Tape& tape, const ContextTokens& ctx, const std::vector<int>& tokens,
                           LayerCaches* caches_out) const {
  if (tokens.empty()) throw std::invalid_argument("sequence_logits: empty sequence");
  std::vector<int> inputs{vocab_.bos()};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  LayerCaches caches;
  Var hidden = Prefill(tape, ctx, inputs, caches);
  if (caches_out) *caches_out = caches;
  return Head(tape, hidden);
}

BoolMat Policy::GrammarMask(const std::vector<int>& tokens) const {
  BoolMat mask(static_cast<Eigen::Index>(tokens.size()), vocab_.size());
  std::vector<int> prefix;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const std::vector<bool> allowed =
        GrammarAllowed(vocab_, prefix, config_.horizon, config_.max_reason);
    for (int j = 0; j < vocab_.size(); ++j) mask(i, j) = allowed[j];
    prefix.push_back(tokens[i]);
  }
  return mask;
}

Var Policy::SequenceLogProb(Tape& tape, const ContextTokens& ctx,
                            const std::vector<int>& tokens) const {
  if (!IsGrammatical(vocab_, tokens, config_.horizon, config_.max_reason)) {
    throw std::invalid_argument("sequence_logprob: sequence violates the output grammar");
  }
  const BoolMat mask = GrammarMask(tokens);
  Var logp = LogSoftmax(SequenceLogits(tape, ctx, tokens), &mask);
  return Sum(PickRows(logp, tokens));
}

Var Policy::GroupLogProbs(Tape& tape, const ContextTokens& ctx,
                          const std::vector<std::vector<int>>& sequences) const {
  if (sequences.empty()) throw std::invalid_argument("group_logprobs: no sequences");
  const int nc = ctx.length();
  std::vector<int> ids, positions, targets, starts;
  for (const auto& seq : sequences) {
    if (!IsGrammatical(vocab_, seq, config_.horizon, config_.max_reason)) {
      throw std::invalid_argument("group_logprobs: sequence violates the output grammar");
    }
    starts.push_back(static_cast<int>(ids.size()));
    ids.push_back(vocab_.bos());
    positions.push_back(0);
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      ids.push_back(seq[i]);
      positions.push_back(static_cast<int>(i) + 1);
    }
    targets.insert(targets.end(), seq.begin(), seq.end());
  }
  const int ng = static_cast<int>(ids.size());
  const int n = nc + ng;
  BoolMat mask = BoolMat::Constant(n, n, false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nc; ++j) mask(i, j) = ctx.valid[j];
  }
  for (size_t g = 0; g < sequences.size(); ++g) {
    const int a = nc + starts[g];
    const int b = a + static_cast<int>(sequences[g].size());
    for (int i = a; i < b; ++i) {
      for (int j = a; j <= i; ++j) mask(i, j) = true;
    }
  }
  Var x = ConcatRows({EmbedContext(tape, ctx), EmbedTokens(tape, ids, positions)});
  LayerCaches caches;
  Var hidden = SliceRows(Backbone(tape, x, mask, caches), nc, ng);
  BoolMat grammar(ng, vocab_.size());
  for (size_t g = 0; g < sequences.size(); ++g) {
    grammar.middleRows(starts[g], sequences[g].size()) = GrammarMask(sequences[g]);
  }
  Var picked = PickRows(LogSoftmax(Head(tape, hidden), &grammar), targets);
  std::vector<Var> sums;
  for (size_t g = 0; g < sequences.size(); ++g) {
    sums.push_back(Sum(SliceRows(picked, starts[g], static_cast<int>(sequences[g].size()))));
  }
  return ConcatRows(sums);
}

std::vector<bool> Policy::CacheValid(const ContextTokens& ctx, int generated) {
  std::vector<bool> valid = ctx.valid;
  valid.resize(ctx.valid.size() + generated, true);
  return valid;
}

DecodeResult Policy::Decode(const ContextTokens& ctx, const DecodeOptions& options) const {
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw std::invalid_argument("decode: temperature must be positive");
  }
  auto owner = std::make_shared<Tape>(false);
  Tape& tape = *owner;
  DecodeResult result;
  Var hidden = Prefill(tape, ctx, {vocab_.bos()}, result.caches);
  result.caches.owner = owner;
  Rng rng(options.seed);
  const int max_len = config_.max_reason + config_.horizon + 2;
  while (static_cast<int>(result.tokens.size()) < max_len) {
    const std::vector<bool> allowed =
        GrammarAllowed(vocab_, result.tokens, config_.horizon, config_.max_reason);
    const Mat logits = Head(tape, hidden).value();
    // Masked, temperature-scaled log-probabilities of the last row.
    const double temp = options.greedy ? 1.0 : options.temperature;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < vocab_.size(); ++j) {
      if (allowed[j]) mx = std::max(mx, logits(0, j) / temp);
    }
    double total = 0.0;
    for (int j = 0; j < vocab_.size(); ++j) {
      if (allowed[j]) total += std::exp(logits(0, j) / temp - mx);
    }
    const double lse = mx + std::log(total);
    int token = -1;
    const size_t pos = result.tokens.size();
    if (pos < options.forced_prefix.size()) {
      token = options.forced_prefix[pos];
      if (token < 0 || token >= vocab_.size() || !allowed[token]) {
        throw std::invalid_argument("decode: forced prefix violates the grammar");
      }
    } else if (options.greedy) {
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < vocab_.size(); ++j) {
        if (allowed[j] && logits(0, j) > best) {
          best = logits(0, j);
          token = j;
        }
      }
    } else {
      double r = rng.Uniform();
      for (int j = 0; j < vocab_.size(); ++j) {
        if (!allowed[j]) continue;
        token = j;
        r -= std::exp(logits(0, j) / temp - lse);
        if (r < 0.0) break;
      }
    }
    if (!std::isfinite(logits(0, token))) return result;
    result.logprob += logits(0, token) / temp - lse;
    result.tokens.push_back(token);
    if (token == vocab_.eos()) {
      result.complete = true;
      break;
    }
    const int position = static_cast<int>(result.tokens.size());
    const int n = result.caches.length;
    BoolMat mask(1, n + 1);
    for (int j = 0; j <= n; ++j) mask(0, j) = j < ctx.length() ? ctx.valid[j] : true;
    hidden = Backbone(tape, EmbedTokens(tape, {token}, position), mask, result.caches);
    if (options.stop_at_action_start && token == vocab_.action_start()) break;
  }
  return result;
}

HistoryEmbedding Policy::EmbedHistory(Tape& tape, const Trajectory& history, double noise_std,
                                      uint64_t seed) const {
  if (history.size() < 2) throw std::invalid_argument("embed_history: history too short");
  const Mat raw = HistoryFeatures(history);
  Mat scaled = raw;
  for (int k = 0; k <= kHistorySteps; ++k) {
    scaled(0, 4 * k) /= kActionScale;
    scaled(0, 4 * k + 1) /= kActionScale;
  }
  Var hidden = Silu(Affine(tape.Constant(scaled, "history_scaled"), Param(tape, "history/w1"),
                           Param(tape, "history/b1")));
  HistoryEmbedding out;
  if (config_.history_init) {
    Var anchors = Add(MatMul(tape.Constant(raw, "history"), Param(tape, "history/skip")),
                      MatMul(hidden, Param(tape, "history/anchor")));
    out.anchors = Reshape(anchors, config_.horizon, 2);
  } else {
    out.anchors = tape.Constant(Mat::Zero(config_.horizon, 2), "zero_anchors");
  }
  if (noise_std > 0.0) {
    Rng rng(seed);
    Mat noise(config_.horizon, 2);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = noise_std * rng.Normal();
    out.anchors = Add(out.anchors, tape.Constant(noise, "anchor_noise"));
  }
  out.query = Reshape(Affine(hidden, Param(tape, "history/query/w"), Param(tape, "history/query/b")),
                      config_.n_queries, config_.d_bridge);
  return out;
}

BridgeContext Policy::PrepareBridge(Tape& tape, const LayerCaches& caches,
                                    const std::vector<bool>& valid) const {
  if (static_cast<int>(caches.k.size()) != config_.n_layers) {
    throw std::invalid_argument("bridge: expected " + std::to_string(config_.n_layers) +
                                " cache layers, got " + std::to_string(caches.k.size()));
  }
  BridgeContext b;
  for (size_t j = 0; j < sparse_layers_.size(); ++j) {
    const int l = sparse_layers_[j];
    if (l < 0 || l >= config_.n_layers) throw std::invalid_argument("bridge: layer index out of range");
    const std::string p = "bridge/b" + std::to_string(j);
    Var k = caches.k[l], v = caches.v[l];
    if (k.tape != &tape) {
      k = tape.Constant(k.value(), "cache_k");
      v = tape.Constant(v.value(), "cache_v");
    }
    b.k.push_back(MatMul(k, Param(tape, p + "/cross/wk")));
    b.v.push_back(MatMul(v, Param(tape, p + "/cross/wv")));
  }
  const int n = caches.length;
  if (static_cast<int>(valid.size()) != n) {
    throw std::invalid_argument("bridge: validity flags do not match cache length");
  }
  b.mask.resize(config_.n_queries, n);
  for (int i = 0; i < config_.n_queries; ++i) {
    for (int j = 0; j < n; ++j) b.mask(i, j) = valid[j];
  }
  return b;
}

Var Policy::VectorFieldAt(Tape& tape, Var a_tau, double tau, Var query,
                          const BridgeContext& bridge) const {
  const int nq = config_.n_queries;
  const int chunk = config_.horizon / nq;
  const int db = config_.d_bridge;
  if (a_tau.rows() != config_.horizon || a_tau.cols() != 2) {
    throw std::invalid_argument("vector field: a_tau must be horizon x 2");
  }
  if (bridge.k.size() != sparse_layers_.size()) {
    throw std::invalid_argument("vector field: bridge has the wrong number of layers");
  }
  Var a_in = Reshape(Scale(a_tau, 1.0 / kActionScale), nq, 2 * chunk);
  Var x = Affine(a_in, Param(tape, "bridge/a_in/w"), Param(tape, "bridge/a_in/b"));
  Var t = tape.Constant(SinusoidalEmbedding({tau * 100.0}, db, 1000.0), "tau");
  t = Silu(Affine(t, Param(tape, "bridge/time/w1"), Param(tape, "bridge/time/b1")));
  t = Affine(t, Param(tape, "bridge/time/w2"), Param(tape, "bridge/time/b2"));
  std::vector<double> qpos(nq);
  for (int i = 0; i < nq; ++i) qpos[i] = i;
  x = Add(Add(x, query), tape.Constant(SinusoidalEmbedding(qpos, db, 100.0), "query_pos"));
  x = AddRow(x, t);
  for (size_t j = 0; j < sparse_layers_.size(); ++j) {
    const std::string p = "bridge/b" + std::to_string(j);
    Var h = LayerNorm(x, Param(tape, p + "/ln1/g"), Param(tape, p + "/ln1/b"));
    Var sa = Attention(MatMul(h, Param(tape, p + "/self/wq")), MatMul(h, Param(tape, p + "/self/wk")),
                       MatMul(h, Param(tape, p + "/self/wv")), config_.n_heads);
    x = Add(x, MatMul(sa, Param(tape, p + "/self/wo")));
    Var h2 = LayerNorm(x, Param(tape, p + "/ln2/g"), Param(tape, p + "/ln2/b"));
    Var ca = Attention(MatMul(h2, Param(tape, p + "/cross/wq")), bridge.k[j], bridge.v[j],
                       config_.n_heads, &bridge.mask);
    x = Add(x, MatMul(ca, Param(tape, p + "/cross/wo")));
    Var h3 = LayerNorm(x, Param(tape, p + "/ln3/g"), Param(tape, p + "/ln3/b"));
    x = Add(x, GatedMlp(h3, Param(tape, p + "/mlp/gate"), Param(tape, p + "/mlp/up"),
                        Param(tape, p + "/mlp/down")));
  }
  Var out = LayerNorm(x, Param(tape, "bridge/out/ln/g"), Param(tape, "bridge/out/ln/b"));
  out = Affine(out, Param(tape, "bridge/out/w"), Param(tape, "bridge/out/b"));
  return Reshape(Scale(out, kActionScale), config_.horizon, 2);
}

std::optional<Mat> Policy::FlowSample(const LayerCaches& caches, const std::vector<bool>& valid,
                                      const Trajectory& history, int steps) const {
  Tape tape(false);
  const HistoryEmbedding emb = EmbedHistory(tape, history, 0.0, 0);
  const BridgeContext bridge = PrepareBridge(tape, caches, valid);
  const Mat anchors = emb.anchors.value();
  VectorField field = [&](const Mat& a, double tau) {
    return VectorFieldAt(tape, tape.Constant(a, "a_tau"), tau, emb.query, bridge).value();
  };
  return FmIntegrate(field, anchors, steps);
}

Trajectory Policy::PlanAutoregressive(const Scenario& scenario, const DecodeOptions& options,
                                      DecodeResult* result) const {
  const ContextTokens ctx = EncodeContextFeatures(scenario, config_.max_context);
  DecodeResult r = Decode(ctx, options);
  Trajectory plan;
  if (r.complete && codebook_.size() == config_.codebook_size) {
    const ParsedSequence parsed = ParseSequence(vocab_, r.tokens, config_.horizon, config_.max_reason);
    plan = Detokenize(codebook_, parsed.actions, CurrentPose(scenario));
  }
  if (result) *result = std::move(r);
  return plan;
}

Trajectory Policy::PlanFlow(const Scenario& scenario, int steps,
                            std::vector<int>* reasoning) const {
  const ContextTokens ctx = EncodeContextFeatures(scenario, config_.max_context);
  DecodeOptions opts;
  opts.greedy = true;
  opts.stop_at_action_start = true;
  const DecodeResult r = Decode(ctx, opts);
  if (reasoning) *reasoning = r.tokens;
  const std::vector<bool> valid = CacheValid(ctx, static_cast<int>(r.tokens.size()) + 1);
  const std::optional<Mat> offsets =
      FlowSample(r.caches, valid, scenario.ego_history, steps > 0 ? steps : config_.flow_steps);
  if (!offsets) return Trajectory{};
  return OffsetsToTrajectory(*offsets, CurrentPose(scenario));
}

}  // namespace driveflow
