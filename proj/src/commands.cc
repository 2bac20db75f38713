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

#include "driveflow/commands.h"

#include <filesystem>
#include <iomanip>
#include <map>

#include "driveflow/dataio.h"
#include "driveflow/training.h"
#include "json.hpp"

namespace driveflow {
namespace {

namespace fs = std::filesystem;

RunConfig BaseConfig(const std::optional<std::string>& path) {
  if (!path) return Normalize(RunConfig{});
  if (!fs::exists(*path)) throw CommandError("config file not found: " + *path);
  return LoadConfig(*path);
}

void RequireFile(const std::string& path, const std::string& what) {
  if (!fs::exists(path) || fs::is_directory(path)) throw CommandError(what + " not found: " + path);
}

void PrepareOutputDir(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw CommandError("output directory exists: " + dir + " (pass --force to overwrite)");
    if (!fs::is_directory(dir)) throw CommandError("output path is not a directory: " + dir);
  }
  fs::create_directories(dir);
}

void PrepareOutputFile(const std::string& file, bool force) {
  if (fs::exists(file) && !force) {
    throw CommandError("output file exists: " + file + " (pass --force to overwrite)");
  }
}

std::string Join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void WriteConfig(const RunConfig& config, const std::string& path) {
  WriteFileAtomic(path, ConfigToJson(config));
}

}  // namespace

std::string DirConfigPath(const std::string& dir) { return Join(dir, "config.json"); }
std::string FileConfigPath(const std::string& file) { return file + ".config.json"; }

void CmdGenData(const GenDataArgs& args, std::ostream& log) {
  RunConfig config = BaseConfig(args.config);
  if (args.seed) config.seed = *args.seed;
  if (args.count) config.data.count = *args.count;
  if (args.neg_frac) config.data.neg_frac = *args.neg_frac;
  if (args.rec_frac) config.data.rec_frac = *args.rec_frac;
  if (args.archetypes) {
    config.data.archetypes.clear();
    for (const std::string& a : *args.archetypes) config.data.archetypes.push_back(ParseArchetype(a));
  }
  config = ConfigFromJson(ConfigToJson(config));
  PrepareOutputFile(args.out, args.force);
  const auto data = GenerateDataset(config.seed, config.data.count, config.data.neg_frac,
                                    config.data.rec_frac, config.data.archetypes);
  WriteDataset(data, args.out);
  WriteConfig(config, FileConfigPath(args.out));
  std::map<Label, int> counts;
  for (const Scenario& s : data) ++counts[s.label];
  log << "wrote " << data.size() << " scenarios to " << args.out << " (positive "
      << counts[Label::kPositive] << ", negative " << counts[Label::kNegative] << ", recovery "
      << counts[Label::kRecovery] << ")\n";
}

void CmdTrainSft(const TrainSftArgs& args, std::ostream& log) {
  RequireFile(args.data, "dataset");
  const RunConfig config = BaseConfig(args.config);
  const auto data = ReadDataset(args.data);
  PrepareOutputDir(args.out, args.force);
  WriteConfig(config, DirConfigPath(args.out));
  Policy policy(config.policy, config.seed);
  MetricsLog metrics(Join(args.out, "metrics.jsonl"));
  const SftResult r = TrainSft(policy, data, config.sft, [&](const LossPoint& p) {
    metrics.Append(LossPointJson(p));
    if ((p.step + 1) % 100 == 0) {
      log << p.stage << " step " << p.step + 1 << " loss " << p.loss << "\n";
    }
  });
  metrics.Finalize();
  nlohmann::json summary = {{"fm_initial", r.fm_initial},
                            {"fm_final", r.fm_final},
                            {"diverged", r.diverged},
                            {"message", r.message},
                            {"stage1_steps", r.stage1.size()},
                            {"stage2_steps", r.stage2.size()}};
  WriteFileAtomic(Join(args.out, "summary.json"), summary.dump(1) + "\n");
  SaveCheckpoint(MakeCheckpoint(policy, config), Join(args.out, "checkpoint.json"));
  if (r.diverged) throw CommandError("training diverged: " + r.message);
  log << "fm_loss " << r.fm_initial << " -> " << r.fm_final << "; checkpoint in " << args.out
      << "\n";
}

void CmdTrainRft(const TrainRftArgs& args, std::ostream& log) {
  RequireFile(args.checkpoint, "checkpoint");
  RequireFile(args.data, "dataset");
  if (args.recipe) RequireFile(*args.recipe, "recipe");
  std::optional<RunConfig> given;
  if (args.config) given = BaseConfig(args.config);
  const Checkpoint ckpt =
      LoadCheckpoint(args.checkpoint, given ? std::optional<std::string>(ConfigHash(*given))
                                            : std::nullopt,
                     args.allow_config_mismatch);
  RunConfig config = given ? *given : ckpt.config;
  if (!(config.policy == ckpt.config.policy)) {
    throw CommandError("config policy section does not match the checkpoint's model");
  }
  if (args.recipe) {
    nlohmann::json wrapped = nlohmann::json::parse(ConfigToJson(config));
    try {
      wrapped["recipe"] = nlohmann::json::parse(ReadFile(*args.recipe));
    } catch (const nlohmann::json::parse_error& e) {
      throw CommandError("malformed recipe file " + *args.recipe + ": " + e.what());
    }
    config = ConfigFromJson(wrapped.dump());
  }
  const auto data = ReadDataset(args.data);
  const RecipeStream stream = SampleRecipe(data, config.recipe);
  for (Label l : stream.with_replacement) {
    log << "note: " << ToString(l) << " samples drawn with replacement\n";
  }
  PrepareOutputDir(args.out, args.force);
  WriteConfig(config, DirConfigPath(args.out));
  nlohmann::json stream_json = nlohmann::json::object();
  std::vector<std::string> ids;
  for (const Scenario& s : stream.stream) ids.push_back(s.id);
  std::vector<std::string> repl;
  for (Label l : stream.with_replacement) repl.emplace_back(ToString(l));
  stream_json["warmup_count"] = stream.warmup_count;
  stream_json["scenario_ids"] = ids;
  stream_json["with_replacement"] = repl;
  WriteFileAtomic(Join(args.out, "stream.json"), stream_json.dump(1) + "\n");

  Policy policy = PolicyFromCheckpoint(ckpt);
  MetricsLog metrics(Join(args.out, "metrics.jsonl"));
  const RftResult r = RunRft(policy, stream.stream, stream.warmup_count, config.rft, config.reward,
                             [&](const GroupLog& g) {
                               metrics.Append(GroupLogJson(g));
                               if ((g.step + 1) % 50 == 0) {
                                 log << "rft step " << g.step + 1 << " mean reward "
                                     << g.mean_reward << "\n";
                               }
                             });
  metrics.Finalize();
  if (!policy.params().AllFinite()) throw CommandError("RFT produced non-finite parameters");
  SaveCheckpoint(MakeCheckpoint(policy, config, &r.optimizer), Join(args.out, "checkpoint.json"));
  log << "rft finished: " << r.log.size() << " steps, " << r.skipped << " skipped; checkpoint in "
      << args.out << "\n";
}

void CmdEval(const EvalArgs& args, std::ostream& log) {
  RequireFile(args.checkpoint, "checkpoint");
  RequireFile(args.data, "dataset");
  const Checkpoint ckpt = LoadCheckpoint(args.checkpoint);
  RunConfig config = ckpt.config;
  if (args.mode) config.benchmark_mode = ParseBenchmarkMode(*args.mode);
  if (args.planner) config.eval.planner = ParsePlannerKind(*args.planner);
  if (args.flow_steps) config.eval.flow_steps = *args.flow_steps;
  config = ConfigFromJson(ConfigToJson(config));
  PrepareOutputFile(args.report, args.force);
  const Policy policy = PolicyFromCheckpoint(ckpt);
  const auto data = ReadDataset(args.data);
  const auto rows = Evaluate(policy, data, config.eval.planner, config.metrics, config.eval.flow_steps);
  const Report report = MakeReport(ToReportRows(rows), config.benchmark_mode);
  WriteReport(report, args.report);
  WriteConfig(config, FileConfigPath(args.report));
  log << "evaluated " << rows.size() << " scenarios: PDMS " << report.summary.pdms << " EPDMS "
      << report.summary.epdms << " ADE " << report.summary.ade << "\n";
}

void CmdScore(const ScoreArgs& args, std::ostream& log) {
  RequireFile(args.traj_file, "trajectory file");
  RequireFile(args.scenario_file, "scenario file");
  RunConfig config = BaseConfig(args.config);
  if (args.mode) config.benchmark_mode = ParseBenchmarkMode(*args.mode);
  config = ConfigFromJson(ConfigToJson(config));
  PrepareOutputFile(args.report, args.force);
  const auto scenarios = ReadDataset(args.scenario_file);
  const auto trajs = ReadTrajectories(args.traj_file);
  std::map<std::string, const Scenario*> by_id;
  for (const Scenario& s : scenarios) by_id[s.id] = &s;
  std::vector<ReportRow> rows;
  for (const NamedTrajectory& t : trajs) {
    auto it = by_id.find(t.scenario_id);
    if (it == by_id.end()) throw CommandError("no scenario with id '" + t.scenario_id + "'");
    const Scenario& s = *it->second;
    ReportRow row{s.id, s.label, s.archetype, Score(t.traj, s, nullptr, config.metrics), 0.0};
    row.ade = t.traj.empty() ? std::numeric_limits<double>::infinity()
                             : AvgDistance(t.traj, s.reference);
    rows.push_back(std::move(row));
  }
  const Report report = MakeReport(rows, config.benchmark_mode);
  WriteReport(report, args.report);
  WriteConfig(config, FileConfigPath(args.report));
  log << "scored " << rows.size() << " trajectories: PDMS " << report.summary.pdms << " EPDMS "
      << report.summary.epdms << "\n";
}

AblationResult CmdAblate(const AblateArgs& args, std::ostream& log) {
  const AblationKind kind = ParseAblationKind(args.kind);
  const RunConfig config = BaseConfig(args.config);
  if (args.data) RequireFile(*args.data, "dataset");
  if (args.checkpoint) RequireFile(*args.checkpoint, "checkpoint");
  if (args.seeds.empty()) throw CommandError("at least one seed is required");
  PrepareOutputDir(args.out, args.force);
  WriteConfig(config, DirConfigPath(args.out));
  // One dataset shared by every arm.
  const std::vector<Scenario> data =
      args.data ? ReadDataset(*args.data)
                : GenerateDataset(config.seed, config.data.count, config.data.neg_frac,
                                  config.data.rec_frac, config.data.archetypes);
  std::vector<Scenario> negatives;
  const auto heldout = HeldOutPositives(config.seed, args.heldout, &negatives);
  auto base_policy = [&](bool full_sft) {
    if (args.checkpoint) {
      const Checkpoint ckpt = LoadCheckpoint(*args.checkpoint, ConfigHash(config), false);
      return PolicyFromCheckpoint(ckpt);
    }
    log << "training the shared " << (full_sft ? "SFT" : "stage-1") << " model\n";
    if (!full_sft) return TrainStage1(config, data);
    Policy p(config.policy, config.seed);
    const SftResult r = TrainSft(p, data, config.sft);
    if (r.diverged) throw CommandError("SFT diverged: " + r.message);
    return p;
  };
  AblationResult result;
  switch (kind) {
    case AblationKind::kLayers: {
      const Policy base = base_policy(false);
      result = AblateLayers(config, base, data, heldout, {1, 2, 4, config.policy.n_layers},
                            args.seeds);
      break;
    }
    case AblationKind::kHistoryInit: {
      const Policy base = base_policy(false);
      result = AblateHistoryInit(config, base, data, heldout, args.seeds);
      break;
    }
    case AblationKind::kRecipe: {
      const Policy base = base_policy(true);
      result = AblateRecipe(config, base, data, heldout, negatives, args.seeds);
      break;
    }
    case AblationKind::kShaping: {
      const Policy base = base_policy(true);
      result = AblateShaping(config, base, data, heldout, negatives, {0.0, 0.25, 0.5, 1.0},
                             args.seeds);
      break;
    }
  }
  WriteFileAtomic(Join(args.out, "ablation.json"), AblationToJson(result));
  const std::string table = AblationToText(result);
  WriteFileAtomic(Join(args.out, "ablation.txt"), table);
  log << table;
  return result;
}

void CmdBenchLatency(const BenchLatencyArgs& args, std::ostream& log) {
  RequireFile(args.checkpoint, "checkpoint");
  if (args.data) RequireFile(*args.data, "dataset");
  if (args.waypoints.empty()) throw CommandError("at least one waypoint count is required");
  if (args.out) PrepareOutputFile(*args.out, args.force);
  const Checkpoint ckpt = LoadCheckpoint(args.checkpoint);
  const Policy policy = PolicyFromCheckpoint(ckpt);
  const std::vector<Scenario> scenarios =
      args.data ? ReadDataset(*args.data) : HeldOutPositives(ckpt.config.seed, 5);
  const auto rows = BenchLatency(policy, scenarios, args.waypoints, args.repeats,
                                 ckpt.config.eval.flow_steps);
  nlohmann::json j = nlohmann::json::array();
  log << std::setw(10) << "waypoints" << std::setw(14) << "ar_ms" << std::setw(14) << "flow_ms"
      << "\n";
  for (const LatencyRow& r : rows) {
    log << std::setw(10) << r.waypoints << std::fixed << std::setprecision(3) << std::setw(14)
        << r.ar_median * 1e3 << std::setw(14) << r.flow_median * 1e3 << "\n";
    j.push_back({{"waypoints", r.waypoints},
                 {"ar_median_s", r.ar_median},
                 {"flow_median_s", r.flow_median},
                 {"ar_s", r.ar_seconds},
                 {"flow_s", r.flow_seconds}});
  }
  if (args.out) {
    WriteFileAtomic(*args.out, j.dump(1) + "\n");
    WriteConfig(ckpt.config, FileConfigPath(*args.out));
  }
}

}  // namespace driveflow
