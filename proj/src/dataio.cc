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

#include "driveflow/dataio.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include "driveflow/random.h"
#include "json.hpp"

namespace driveflow {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
T Field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw DataError(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad field '") + key + "': " + e.what());
  }
}

template <typename T, typename Parse>
T EnumField(const json& j, const char* key, Parse parse) {
  const std::string s = Field<std::string>(j, key);
  try {
    return parse(s);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("bad field '") + key + "': " + e.what());
  }
}

json PointsJson(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const Vec2& p : pts) a.push_back({p.x, p.y});
  return a;
}

std::vector<Vec2> PointsFrom(const json& a) {
  if (!a.is_array()) throw DataError("expected an array of points");
  std::vector<Vec2> pts;
  pts.reserve(a.size());
  for (const json& p : a) {
    if (!p.is_array() || p.size() != 2) throw DataError("point must be [x_m, y_m]");
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return pts;
}

json TrajectoryJson(const Trajectory& t) {
  json wps = json::array();
  for (const Waypoint& w : t.waypoints) wps.push_back({w.x, w.y, w.heading});
  return {{"dt_s", t.dt}, {"t0_steps", t.t0}, {"poses_m_m_rad", wps}};
}

Trajectory TrajectoryFrom(const json& j) {
  Trajectory t;
  t.dt = Field<double>(j, "dt_s");
  t.t0 = Field<int>(j, "t0_steps");
  const json& wps = j.at("poses_m_m_rad");
  if (!wps.is_array()) throw DataError("poses must be an array");
  for (const json& w : wps) {
    if (!w.is_array() || w.size() != 3) throw DataError("pose must be [x_m, y_m, heading_rad]");
    t.waypoints.push_back({w[0].get<double>(), w[1].get<double>(), w[2].get<double>()});
  }
  return t;
}

json SceneJson(const Scene& s) {
  json areas = json::array();
  for (const auto& poly : s.drivable_area) areas.push_back(PointsJson(poly));
  json lanes = json::array();
  for (const LaneCenterline& l : s.lanes) {
    lanes.push_back({{"points_m", PointsJson(l.points)}, {"directions_rad", l.directions}});
  }
  json obstacles = json::array();
  for (const Obstacle& o : s.obstacles) {
    obstacles.push_back({{"kind", std::string(ToString(o.kind))},
                         {"length_m", o.length},
                         {"width_m", o.width},
                         {"trajectory", TrajectoryJson(o.trajectory)}});
  }
  json lights = json::array();
  for (const TrafficLight& l : s.traffic_lights) {
    json sched = json::array();
    for (LightState st : l.schedule) sched.push_back(std::string(ToString(st)));
    lights.push_back({{"stop_line_start_m", {l.stop_line_start.x, l.stop_line_start.y}},
                      {"stop_line_end_m", {l.stop_line_end.x, l.stop_line_end.y}},
                      {"schedule", sched}});
  }
  return {{"drivable_area_m", areas},     {"lanes", lanes},
          {"obstacles", obstacles},       {"traffic_lights", lights},
          {"route_m", PointsJson(s.route)}, {"speed_limit_mps", s.speed_limit}};
}

Vec2 PointFrom(const json& p) {
  if (!p.is_array() || p.size() != 2) throw DataError("point must be [x_m, y_m]");
  return {p[0].get<double>(), p[1].get<double>()};
}

Scene SceneFrom(const json& j) {
  Scene s;
  for (const json& poly : j.at("drivable_area_m")) s.drivable_area.push_back(PointsFrom(poly));
  for (const json& l : j.at("lanes")) {
    LaneCenterline lane;
    lane.points = PointsFrom(l.at("points_m"));
    lane.directions = Field<std::vector<double>>(l, "directions_rad");
    s.lanes.push_back(std::move(lane));
  }
  for (const json& o : j.at("obstacles")) {
    Obstacle ob;
    ob.kind = EnumField<ObstacleKind>(o, "kind", ParseObstacleKind);
    ob.length = Field<double>(o, "length_m");
    ob.width = Field<double>(o, "width_m");
    ob.trajectory = TrajectoryFrom(o.at("trajectory"));
    s.obstacles.push_back(std::move(ob));
  }
  for (const json& l : j.at("traffic_lights")) {
    TrafficLight tl;
    tl.stop_line_start = PointFrom(l.at("stop_line_start_m"));
    tl.stop_line_end = PointFrom(l.at("stop_line_end_m"));
    for (const json& st : l.at("schedule")) tl.schedule.push_back(ParseLightState(st.get<std::string>()));
    s.traffic_lights.push_back(std::move(tl));
  }
  s.route = PointsFrom(j.at("route_m"));
  s.speed_limit = Field<double>(j, "speed_limit_mps");
  return s;
}

json ScenarioJson(const Scenario& s) {
  json tags = json::array();
  for (Lateral t : s.reasoning_tags) tags.push_back(std::string(ToString(t)));
  return {{"id", s.id},
          {"label", std::string(ToString(s.label))},
          {"instruction", std::string(ToString(s.instruction))},
          {"archetype", std::string(ToString(s.archetype))},
          {"reasoning_tags", tags},
          {"scene", SceneJson(s.scene)},
          {"ego_history", TrajectoryJson(s.ego_history)},
          {"reference", TrajectoryJson(s.reference)}};
}

Scenario ScenarioFrom(const json& j) {
  Scenario s;
  try {
    s.id = Field<std::string>(j, "id");
    s.label = EnumField<Label>(j, "label", ParseLabel);
    s.instruction = EnumField<Instruction>(j, "instruction", ParseInstruction);
    s.archetype = EnumField<Archetype>(j, "archetype", ParseArchetype);
    for (const json& t : j.at("reasoning_tags")) s.reasoning_tags.push_back(ParseLateral(t.get<std::string>()));
    s.scene = SceneFrom(j.at("scene"));
    s.ego_history = TrajectoryFrom(j.at("ego_history"));
    s.reference = TrajectoryFrom(j.at("reference"));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed scenario: ") + e.what());
  }
  if (auto err = ValidateScenario(s)) throw DataError("invalid scenario '" + s.id + "': " + *err);
  return s;
}

json DatasetHeader() {
  return {{"schema_version", kDatasetSchemaVersion},
          {"kind", "dataset"},
          {"units", {{"length", "m"}, {"angle", "rad"}, {"time", "s"}, {"speed", "m/s"}}}};
}

void CheckSchema(const json& j, int expected, const std::string& what) {
  if (!j.is_object() || !j.contains("schema_version")) {
    throw DataError(what + ": missing schema_version");
  }
  const int v = j.at("schema_version").get<int>();
  if (v != expected) {
    throw DataError(what + ": unsupported schema_version " + std::to_string(v) + " (expected " +
                    std::to_string(expected) + ")");
  }
}

json ParseJson(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(what + ": malformed JSON: " + e.what());
  }
}

json MatJson(const Mat& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat MatFrom(const json& j, const std::string& name) {
  const auto rows = Field<Eigen::Index>(j, "rows");
  const auto cols = Field<Eigen::Index>(j, "cols");
  const auto data = Field<std::vector<double>>(j, "data");
  if (rows < 0 || cols < 0 || static_cast<size_t>(rows * cols) != data.size()) {
    throw DataError("array '" + name + "' has " + std::to_string(data.size()) +
                    " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Mat m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json MatMapJson(const std::map<std::string, Mat>& mats) {
  json j = json::object();
  for (const auto& [name, m] : mats) j[name] = MatJson(m);
  return j;
}

std::map<std::string, Mat> MatMapFrom(const json& j) {
  std::map<std::string, Mat> out;
  for (const auto& [name, v] : j.items()) out[name] = MatFrom(v, name);
  return out;
}

json SubScoresJson(const SubScores& s) {
  return {{"NC", s.nc}, {"DAC", s.dac}, {"DDC", s.ddc}, {"TLC", s.tlc}, {"EP", s.ep},
          {"TTC", s.ttc}, {"LK", s.lk}, {"HC", s.hc}, {"EC", s.ec}, {"C", s.c}};
}

SubScores SubScoresFrom(const json& j) {
  SubScores s;
  s.nc = Field<double>(j, "NC");
  s.dac = Field<double>(j, "DAC");
  s.ddc = Field<double>(j, "DDC");
  s.tlc = Field<double>(j, "TLC");
  s.ep = Field<double>(j, "EP");
  s.ttc = Field<double>(j, "TTC");
  s.lk = Field<double>(j, "LK");
  s.hc = Field<double>(j, "HC");
  s.ec = Field<double>(j, "EC");
  s.c = Field<double>(j, "C");
  return s;
}

std::vector<double> Columns(const SubScores& s, double pdms, double epdms) {
  return {s.nc, s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.lk, s.hc, s.ec, s.c, pdms, epdms};
}

template <typename T>
void Shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.Index(i)]);
}

}  // namespace

void WriteFileAtomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw DataError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ScenarioToJsonLine(const Scenario& scenario) { return ScenarioJson(scenario).dump(); }

Scenario ScenarioFromJsonLine(const std::string& line) {
  return ScenarioFrom(ParseJson(line, "scenario"));
}

std::string SerializeDataset(const std::vector<Scenario>& scenarios) {
  std::string out = DatasetHeader().dump() + "\n";
  for (const Scenario& s : scenarios) out += ScenarioToJsonLine(s) + "\n";
  out += json{{"count", scenarios.size()}}.dump() + "\n";
  return out;
}

std::vector<Scenario> ParseDataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<Scenario> out;
  std::optional<size_t> trailer;
  auto at_line = [&](const std::string& msg) {
    return DataError("line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (trailer) throw at_line("content after the trailing count record");
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      if (line_no == 1) throw at_line(std::string("malformed header: ") + e.what());
      const std::string last = out.empty() ? std::string("none") : "'" + out.back().id + "'";
      throw at_line(std::string("malformed record (last complete record ") + last + "): " +
                    e.what());
    }
    if (line_no == 1) {
      try {
        CheckSchema(j, kDatasetSchemaVersion, "dataset");
      } catch (const DataError& e) {
        throw at_line(e.what());
      }
      continue;
    }
    if (j.is_object() && j.size() == 1 && j.contains("count")) {
      trailer = j.at("count").get<size_t>();
      continue;
    }
    try {
      out.push_back(ScenarioFrom(j));
    } catch (const DataError& e) {
      throw at_line(e.what());
    }
  }
  if (line_no == 0) throw DataError("dataset is empty (missing header)");
  if (!trailer) {
    const std::string last = out.empty() ? std::string("none") : "'" + out.back().id + "'";
    throw DataError("dataset truncated: no trailing count record; last complete record " + last +
                    " (record " + std::to_string(out.size()) + ")");
  }
  if (*trailer != out.size()) {
    throw DataError("dataset count mismatch: trailer says " + std::to_string(*trailer) +
                    ", found " + std::to_string(out.size()));
  }
  return out;
}

void WriteDataset(const std::vector<Scenario>& scenarios, const std::string& path) {
  WriteFileAtomic(path, SerializeDataset(scenarios));
}

std::vector<Scenario> ReadDataset(const std::string& path) {
  try {
    return ParseDataset(ReadFile(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<Scenario> GenerateDataset(uint64_t seed, int count, double neg_frac,
                                      double rec_frac, const std::vector<Archetype>& archetypes) {
  if (count < 0) throw std::invalid_argument("count must be non-negative");
  if (archetypes.empty()) throw std::invalid_argument("at least one archetype is required");
  if (neg_frac < 0 || rec_frac < 0 || neg_frac + rec_frac > 1.0) {
    throw std::invalid_argument("fractions must be non-negative and sum to <= 1");
  }
  const int neg = static_cast<int>(std::lround(count * neg_frac));
  const int rec = std::min(count - neg, static_cast<int>(std::lround(count * rec_frac)));
  const int pos = count - neg - rec;
  const size_t n_arch = archetypes.size();
  auto make = [&](int base, Label label) {
    return GenerateScenario(MixSeed(seed, static_cast<uint64_t>(base)), archetypes[base % n_arch],
                            label);
  };
  std::vector<Scenario> out;
  out.reserve(count);
  for (int i = 0; i < pos; ++i) out.push_back(make(i, Label::kPositive));
  // Negatives and recoveries are siblings of the leading positives.
  for (int i = 0; i < neg; ++i) out.push_back(make(i, Label::kNegative));
  for (int i = 0; i < rec; ++i) out.push_back(make(neg + i, Label::kRecovery));
  return out;
}

RecipeStream SampleRecipe(const std::vector<Scenario>& dataset, const RftRecipe& recipe) {
  std::map<Label, std::vector<int>> pools;
  for (int i = 0; i < static_cast<int>(dataset.size()); ++i) pools[dataset[i].label].push_back(i);
  Rng rng(recipe.seed);
  RecipeStream result;
  auto draw = [&](Label label, int n) {
    std::vector<int> picks;
    if (n == 0) return picks;
    const std::vector<int>& pool = pools[label];
    if (pool.empty()) {
      throw DataError("recipe requests " + std::to_string(n) + " " + std::string(ToString(label)) +
                      " samples but the dataset has none");
    }
    if (static_cast<size_t>(n) <= pool.size()) {
      std::vector<int> order = pool;
      Shuffle(order, rng);
      picks.assign(order.begin(), order.begin() + n);
    } else {
      result.with_replacement.push_back(label);
      for (int i = 0; i < n; ++i) picks.push_back(pool[rng.Index(pool.size())]);
    }
    return picks;
  };
  // The warm-up and the mixed phase draw positives from one pass so that
  // they do not overlap when the pool is large enough.
  const std::vector<int> positives = draw(Label::kPositive, recipe.warmup_count + recipe.positive);
  std::vector<int> mix(positives.begin() + recipe.warmup_count, positives.end());
  const std::vector<int> neg = draw(Label::kNegative, recipe.negative);
  const std::vector<int> rec = draw(Label::kRecovery, recipe.recovery);
  mix.insert(mix.end(), neg.begin(), neg.end());
  mix.insert(mix.end(), rec.begin(), rec.end());
  Shuffle(mix, rng);
  for (int i = 0; i < recipe.warmup_count; ++i) result.stream.push_back(dataset[positives[i]]);
  for (int i : mix) result.stream.push_back(dataset[i]);
  result.warmup_count = recipe.warmup_count;
  return result;
}

Checkpoint MakeCheckpoint(const Policy& policy, const RunConfig& config,
                          const AdamState* optimizer) {
  if (!(policy.config() == config.policy)) {
    throw std::invalid_argument("policy config does not match the run config");
  }
  Checkpoint c{.config = Normalize(config),
               .config_hash = ConfigHash(config),
               .param_seed = policy.params().seed(),
               .params = policy.params(),
               .codebook = policy.codebook(),
               .optimizer = std::nullopt};
  if (optimizer) c.optimizer = *optimizer;
  return c;
}

std::string SerializeCheckpoint(const Checkpoint& c) {
  json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["config_hash"] = c.config_hash;
  j["config"] = json::parse(ConfigToJson(c.config));
  j["param_seed"] = c.param_seed;
  j["params"] = MatMapJson(c.params.params());
  json cb = json::array();
  for (const Motion& m : c.codebook.centroids) cb.push_back({m[0], m[1], m[2]});
  j["codebook"] = {{"seed", c.codebook.seed}, {"centroids_m_m_rad", cb}};
  if (c.optimizer) {
    j["optimizer"] = {{"m", MatMapJson(c.optimizer->m)},
                      {"v", MatMapJson(c.optimizer->v)},
                      {"steps", c.optimizer->steps}};
  }
  return j.dump(1) + "\n";
}

Checkpoint ParseCheckpoint(const std::string& text) {
  const json j = ParseJson(text, "checkpoint");
  CheckSchema(j, kCheckpointSchemaVersion, "checkpoint");
  try {
    Checkpoint c{.config = ConfigFromJson(j.at("config").dump()),
                 .config_hash = Field<std::string>(j, "config_hash"),
                 .param_seed = Field<uint64_t>(j, "param_seed"),
                 .params = ParamStore(Field<uint64_t>(j, "param_seed")),
                 .codebook = {},
                 .optimizer = std::nullopt};
    if (ConfigHash(c.config) != c.config_hash) {
      throw DataError("checkpoint: stored config_hash does not match its config");
    }
    for (auto& [name, m] : MatMapFrom(j.at("params"))) {
      c.params.Create(name, static_cast<int>(m.rows()), static_cast<int>(m.cols()), Init::kZeros) = m;
    }
    const json& cb = j.at("codebook");
    c.codebook.seed = Field<uint64_t>(cb, "seed");
    for (const json& m : cb.at("centroids_m_m_rad")) {
      if (!m.is_array() || m.size() != 3) throw DataError("codebook centroid must have 3 values");
      c.codebook.centroids.push_back({m[0].get<double>(), m[1].get<double>(), m[2].get<double>()});
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      AdamState st;
      st.m = MatMapFrom(o.at("m"));
      st.v = MatMapFrom(o.at("v"));
      st.steps = Field<std::map<std::string, int64_t>>(o, "steps");
      c.optimizer = std::move(st);
    }
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void SaveCheckpoint(const Checkpoint& checkpoint, const std::string& path) {
  if (!checkpoint.params.AllFinite()) throw DataError("refusing to save non-finite parameters");
  WriteFileAtomic(path, SerializeCheckpoint(checkpoint));
}

Checkpoint LoadCheckpoint(const std::string& path, const std::optional<std::string>& expected_hash,
                          bool allow_hash_mismatch) {
  Checkpoint c;
  try {
    c = ParseCheckpoint(ReadFile(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  if (expected_hash && *expected_hash != c.config_hash && !allow_hash_mismatch) {
    throw DataError(path + ": config hash " + c.config_hash + " does not match expected " +
                    *expected_hash + " (pass the override flag to load anyway)");
  }
  return c;
}

Policy PolicyFromCheckpoint(const Checkpoint& c) {
  Policy policy(c.config.policy, c.param_seed);
  ParamStore& store = policy.mutable_params();
  const auto expected = store.Names();
  const auto stored = c.params.Names();
  if (expected != stored) throw DataError("checkpoint parameter names do not match the model");
  for (const auto& [name, m] : c.params.params()) {
    const Mat& cur = store.Get(name);
    if (cur.rows() != m.rows() || cur.cols() != m.cols()) {
      throw DataError("checkpoint parameter '" + name + "' has the wrong shape");
    }
    store.Set(name, m);
  }
  if (!c.codebook.centroids.empty()) policy.set_codebook(c.codebook);
  return policy;
}

std::vector<ReportRow> ToReportRows(const std::vector<EvalRow>& rows) {
  std::vector<ReportRow> out;
  out.reserve(rows.size());
  for (const EvalRow& r : rows) out.push_back({r.scenario_id, r.label, r.archetype, r.report, r.ade});
  return out;
}

ReportSummary Summarize(const std::vector<ReportRow>& rows) {
  ReportSummary s;
  s.count = static_cast<int>(rows.size());
  if (rows.empty()) {
    s.means = SubScores{0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    return s;
  }
  std::vector<double> sums(12, 0.0);
  double ade = 0.0;
  for (const ReportRow& r : rows) {
    const auto cols = Columns(r.report.subscores, r.report.pdms, r.report.epdms);
    for (size_t i = 0; i < cols.size(); ++i) sums[i] += cols[i];
    ade += r.ade;
  }
  const double n = static_cast<double>(rows.size());
  for (double& v : sums) v /= n;
  s.means = SubScores{sums[0], sums[1], sums[2], sums[3], sums[4],
                      sums[5], sums[6], sums[7], sums[8], sums[9]};
  s.pdms = sums[10];
  s.epdms = sums[11];
  s.ade = ade / n;
  return s;
}

Report MakeReport(const std::vector<ReportRow>& rows, BenchmarkMode mode) {
  return Report{mode, rows, Summarize(rows)};
}

std::string ReportToJson(const Report& report) {
  json rows = json::array();
  for (const ReportRow& r : report.rows) {
    rows.push_back({{"scenario_id", r.scenario_id},
                    {"label", std::string(ToString(r.label))},
                    {"archetype", std::string(ToString(r.archetype))},
                    {"subscores", SubScoresJson(r.report.subscores)},
                    {"PDMS", r.report.pdms},
                    {"EPDMS", r.report.epdms},
                    {"valid", r.report.valid},
                    {"ADE_m", r.ade}});
  }
  json summary = SubScoresJson(report.summary.means);
  summary["PDMS"] = report.summary.pdms;
  summary["EPDMS"] = report.summary.epdms;
  summary["ADE_m"] = report.summary.ade;
  summary["count"] = report.summary.count;
  json j = {{"schema_version", kReportSchemaVersion},
            {"benchmark_mode", std::string(ToString(report.mode))},
            {"columns", std::vector<std::string>(std::begin(kReportColumns), std::end(kReportColumns))},
            {"rows", rows},
            {"summary", summary}};
  return j.dump(1) + "\n";
}

Report ReportFromJson(const std::string& text) {
  const json j = ParseJson(text, "report");
  CheckSchema(j, kReportSchemaVersion, "report");
  try {
    Report r;
    r.mode = EnumField<BenchmarkMode>(j, "benchmark_mode", ParseBenchmarkMode);
    for (const json& row : j.at("rows")) {
      ReportRow rr;
      rr.scenario_id = Field<std::string>(row, "scenario_id");
      rr.label = EnumField<Label>(row, "label", ParseLabel);
      rr.archetype = EnumField<Archetype>(row, "archetype", ParseArchetype);
      rr.report.subscores = SubScoresFrom(row.at("subscores"));
      rr.report.pdms = Field<double>(row, "PDMS");
      rr.report.epdms = Field<double>(row, "EPDMS");
      rr.report.valid = Field<bool>(row, "valid");
      rr.ade = Field<double>(row, "ADE_m");
      r.rows.push_back(std::move(rr));
    }
    const json& s = j.at("summary");
    r.summary.count = Field<int>(s, "count");
    r.summary.means = SubScoresFrom(s);
    r.summary.pdms = Field<double>(s, "PDMS");
    r.summary.epdms = Field<double>(s, "EPDMS");
    r.summary.ade = Field<double>(s, "ADE_m");
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

std::string ReportToText(const Report& report) {
  std::ostringstream out;
  out << "benchmark_mode " << ToString(report.mode) << "  scenarios " << report.summary.count
      << "\n";
  size_t id_width = std::string("scenario").size();
  for (const ReportRow& r : report.rows) id_width = std::max(id_width, r.scenario_id.size());
  id_width = std::max(id_width, std::string("MEAN").size());
  out << std::left << std::setw(static_cast<int>(id_width)) << "scenario" << std::right;
  for (const char* c : kReportColumns) out << std::setw(8) << c;
  out << std::setw(8) << "ADE" << "\n";
  auto line = [&](const std::string& name, const std::vector<double>& cols, double ade) {
    out << std::left << std::setw(static_cast<int>(id_width)) << name << std::right << std::fixed
        << std::setprecision(4);
    for (double v : cols) out << std::setw(8) << v;
    out << std::setw(8) << ade << "\n";
  };
  for (const ReportRow& r : report.rows) {
    line(r.scenario_id, Columns(r.report.subscores, r.report.pdms, r.report.epdms), r.ade);
  }
  if (!report.rows.empty()) {
    line("MEAN", Columns(report.summary.means, report.summary.pdms, report.summary.epdms),
         report.summary.ade);
  }
  return out.str();
}

void WriteReport(const Report& report, const std::string& path) {
  WriteFileAtomic(path, ReportToJson(report));
  fs::path txt(path);
  txt.replace_extension(".txt");
  WriteFileAtomic(txt.string(), ReportToText(report));
}

Report ReadReport(const std::string& path) {
  try {
    return ReportFromJson(ReadFile(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string SerializeTrajectories(const std::vector<NamedTrajectory>& trajectories) {
  json items = json::array();
  for (const NamedTrajectory& t : trajectories) {
    items.push_back({{"scenario_id", t.scenario_id}, {"trajectory", TrajectoryJson(t.traj)}});
  }
  json j = {{"schema_version", kTrajectorySchemaVersion}, {"trajectories", items}};
  return j.dump(1) + "\n";
}

std::vector<NamedTrajectory> ParseTrajectories(const std::string& text) {
  const json j = ParseJson(text, "trajectory file");
  CheckSchema(j, kTrajectorySchemaVersion, "trajectory file");
  std::vector<NamedTrajectory> out;
  try {
    for (const json& item : j.at("trajectories")) {
      out.push_back({Field<std::string>(item, "scenario_id"), TrajectoryFrom(item.at("trajectory"))});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("trajectory file: ") + e.what());
  }
  return out;
}

void WriteTrajectories(const std::vector<NamedTrajectory>& trajectories, const std::string& path) {
  WriteFileAtomic(path, SerializeTrajectories(trajectories));
}

std::vector<NamedTrajectory> ReadTrajectories(const std::string& path) {
  try {
    return ParseTrajectories(ReadFile(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string LossPointJson(const LossPoint& p) {
  return json{{"phase", p.stage}, {"step", p.step}, {"loss", p.loss}, {"aux", p.aux}}.dump();
}

std::string GroupLogJson(const GroupLog& g) {
  const double n = static_cast<double>(std::max<size_t>(1, g.rewards.size()));
  double drv = 0, neg = 0, rec = 0, cot = 0;
  for (const RewardBreakdown& r : g.rewards) {
    drv += r.r_driving;
    neg += r.r_negative;
    rec += r.r_recovery;
    cot += r.r_cot;
  }
  json j = {{"step", g.step},
            {"phase", g.phase},
            {"scenario_id", g.scenario_id},
            {"label", std::string(ToString(g.label))},
            {"mean_reward", g.mean_reward},
            {"std_reward", g.std_reward},
            {"loss", -g.objective},
            {"skipped", g.skipped},
            {"mean_r_driving", drv / n},
            {"mean_r_negative", neg / n},
            {"mean_r_recovery", rec / n},
            {"mean_r_cot", cot / n}};
  return j.dump();
}

MetricsLog::MetricsLog(std::string path) : path_(std::move(path)), tmp_path_(path_ + ".tmp") {
  const fs::path target(path_);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  out_.open(tmp_path_, std::ios::trunc);
  if (!out_) throw DataError("cannot write " + tmp_path_);
}

MetricsLog::~MetricsLog() {
  if (!finalized_) {
    try {
      Finalize();
    } catch (...) {
    }
  }
}

void MetricsLog::Append(const std::string& json_line) {
  out_ << json_line << "\n";
  out_.flush();
}

void MetricsLog::Finalize() {
  if (finalized_) return;
  finalized_ = true;
  out_.close();
  std::error_code ec;
  fs::rename(tmp_path_, path_, ec);
  if (ec) throw DataError("cannot finalize " + path_ + ": " + ec.message());
}

}  // namespace driveflow
