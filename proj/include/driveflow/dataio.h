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

// Persistence: datasets, training streams, checkpoints, evaluation reports,
// trajectory files and metrics logs.

#ifndef DRIVEFLOW_DATAIO_H_
#define DRIVEFLOW_DATAIO_H_

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "driveflow/config.h"
#include "driveflow/microworld.h"
#include "driveflow/nnkit.h"
#include "driveflow/policy.h"
#include "driveflow/training.h"

namespace driveflow {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr int kTrajectorySchemaVersion = 1;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes `content` to a temporary sibling and renames it over `path`.
void WriteFileAtomic(const std::string& path, const std::string& content);
std::string ReadFile(const std::string& path);

// ---------------------------------------------------------------------------
// Datasets: a header line, one scenario per line, and a trailing count line.

std::string ScenarioToJsonLine(const Scenario& scenario);
Scenario ScenarioFromJsonLine(const std::string& line);

std::string SerializeDataset(const std::vector<Scenario>& scenarios);
// Errors name the offending line; a missing trailer names the last complete
// record.
std::vector<Scenario> ParseDataset(const std::string& text);
void WriteDataset(const std::vector<Scenario>& scenarios, const std::string& path);
std::vector<Scenario> ReadDataset(const std::string& path);

// Generates `count` scenarios with label counts rounded from the fractions
// (positives take the remainder), archetypes cycling, scenario i seeded by
// MixSeed(seed, i).
std::vector<Scenario> GenerateDataset(uint64_t seed, int count, double neg_frac,
                                      double rec_frac, const std::vector<Archetype>& archetypes);

// ---------------------------------------------------------------------------
// Training streams.

struct RecipeStream {
  std::vector<Scenario> stream;
  int warmup_count = 0;
  // Labels that had to be drawn with replacement.
  std::vector<Label> with_replacement;
};

RecipeStream SampleRecipe(const std::vector<Scenario>& dataset, const RftRecipe& recipe);

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  RunConfig config;
  std::string config_hash;
  uint64_t param_seed = 0;
  ParamStore params;
  ActionCodebook codebook;
  std::optional<AdamState> optimizer;
};

Checkpoint MakeCheckpoint(const Policy& policy, const RunConfig& config,
                          const AdamState* optimizer = nullptr);
std::string SerializeCheckpoint(const Checkpoint& checkpoint);
Checkpoint ParseCheckpoint(const std::string& text);
void SaveCheckpoint(const Checkpoint& checkpoint, const std::string& path);
// With `expected_hash` set, a different stored hash throws unless
// `allow_hash_mismatch`.
Checkpoint LoadCheckpoint(const std::string& path,
                          const std::optional<std::string>& expected_hash = std::nullopt,
                          bool allow_hash_mismatch = false);
Policy PolicyFromCheckpoint(const Checkpoint& checkpoint);

// ---------------------------------------------------------------------------
// Evaluation reports.

struct ReportRow {
  std::string scenario_id;
  Label label = Label::kPositive;
  Archetype archetype = Archetype::kLaneChange;
  ScoreReport report;
  double ade = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ReportSummary {
  int count = 0;
  SubScores means;
  double pdms = 0.0;
  double epdms = 0.0;
  double ade = 0.0;
};

struct Report {
  BenchmarkMode mode = BenchmarkMode::kPdms;
  std::vector<ReportRow> rows;
  ReportSummary summary;
};

inline constexpr const char* kReportColumns[] = {"NC", "DAC", "DDC", "TLC", "EP", "TTC",
                                                 "LK", "HC",  "EC",  "C",   "PDMS", "EPDMS"};

std::vector<ReportRow> ToReportRows(const std::vector<EvalRow>& rows);
// Means over rows; zeros when empty.
ReportSummary Summarize(const std::vector<ReportRow>& rows);
Report MakeReport(const std::vector<ReportRow>& rows, BenchmarkMode mode);
std::string ReportToJson(const Report& report);
Report ReportFromJson(const std::string& text);
std::string ReportToText(const Report& report);
// Writes `path` (JSON) and `path` with a .txt extension (aligned table).
void WriteReport(const Report& report, const std::string& path);
Report ReadReport(const std::string& path);

// ---------------------------------------------------------------------------
// Trajectory files: planned trajectories keyed by scenario id.

struct NamedTrajectory {
  std::string scenario_id;
  Trajectory traj;

  friend bool operator==(const NamedTrajectory&, const NamedTrajectory&) = default;
};

std::string SerializeTrajectories(const std::vector<NamedTrajectory>& trajectories);
std::vector<NamedTrajectory> ParseTrajectories(const std::string& text);
void WriteTrajectories(const std::vector<NamedTrajectory>& trajectories, const std::string& path);
std::vector<NamedTrajectory> ReadTrajectories(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics logs: one JSON object per line, written to a temporary file and
// renamed on Finalize.

std::string LossPointJson(const LossPoint& point);
std::string GroupLogJson(const GroupLog& log);

class MetricsLog {
 public:
  explicit MetricsLog(std::string path);
  ~MetricsLog();
  MetricsLog(const MetricsLog&) = delete;
  MetricsLog& operator=(const MetricsLog&) = delete;

  void Append(const std::string& json_line);
  void Finalize();

 private:
  std::string path_;
  std::string tmp_path_;
  std::ofstream out_;
  bool finalized_ = false;
};

}  // namespace driveflow

#endif  // DRIVEFLOW_DATAIO_H_
