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

// Command implementations behind the driveflow executable. Each command
// throws on failure; the executable maps exceptions to a nonzero exit.

#ifndef DRIVEFLOW_COMMANDS_H_
#define DRIVEFLOW_COMMANDS_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "driveflow/config.h"
#include "driveflow/experiments.h"

namespace driveflow {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Materialized config locations: `<dir>/config.json` for directory outputs
// and `<file>.config.json` for file outputs.
std::string DirConfigPath(const std::string& dir);
std::string FileConfigPath(const std::string& file);

struct GenDataArgs {
  std::optional<std::string> config;
  std::optional<uint64_t> seed;
  std::optional<int> count;
  std::optional<double> neg_frac;
  std::optional<double> rec_frac;
  std::optional<std::vector<std::string>> archetypes;
  std::string out;
  bool force = false;
};

struct TrainSftArgs {
  std::string data;
  std::optional<std::string> config;
  std::string out;
  bool force = false;
};

struct TrainRftArgs {
  std::string checkpoint;
  std::string data;
  std::optional<std::string> recipe;
  std::optional<std::string> config;
  std::string out;
  bool force = false;
  bool allow_config_mismatch = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string report;
  std::optional<std::string> mode;
  std::optional<std::string> planner;
  std::optional<int> flow_steps;
  bool force = false;
};

struct ScoreArgs {
  std::string traj_file;
  std::string scenario_file;
  std::string report;
  std::optional<std::string> mode;
  std::optional<std::string> config;
  bool force = false;
};

struct AblateArgs {
  std::string kind;
  std::optional<std::string> config;
  std::string out;
  std::optional<std::string> data;
  std::optional<std::string> checkpoint;
  std::vector<uint64_t> seeds = {1};
  int heldout = 100;
  bool force = false;
};

struct BenchLatencyArgs {
  std::string checkpoint;
  std::vector<int> waypoints = {10, 50};
  int repeats = 5;
  std::optional<std::string> data;
  std::optional<std::string> out;
  bool force = false;
};

void CmdGenData(const GenDataArgs& args, std::ostream& log);
void CmdTrainSft(const TrainSftArgs& args, std::ostream& log);
void CmdTrainRft(const TrainRftArgs& args, std::ostream& log);
void CmdEval(const EvalArgs& args, std::ostream& log);
void CmdScore(const ScoreArgs& args, std::ostream& log);
AblationResult CmdAblate(const AblateArgs& args, std::ostream& log);
void CmdBenchLatency(const BenchLatencyArgs& args, std::ostream& log);

}  // namespace driveflow

#endif  // DRIVEFLOW_COMMANDS_H_
