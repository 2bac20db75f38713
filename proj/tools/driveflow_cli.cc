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

// driveflow: command-line entry point.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "driveflow/commands.h"

namespace {

template <typename T>
void OptionalFlag(CLI::App* app, const std::string& name, std::optional<T>& target,
                  const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace driveflow;
  CLI::App app{"Desk-scale driving policy toolkit: data, training, evaluation and ablations"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a scenario dataset");
  OptionalFlag(gen_cmd, "--config", gen.config, "Base config file");
  OptionalFlag(gen_cmd, "--seed", gen.seed, "Dataset seed");
  OptionalFlag(gen_cmd, "--count", gen.count, "Number of scenarios");
  OptionalFlag(gen_cmd, "--neg-frac", gen.neg_frac, "Fraction of negative scenarios");
  OptionalFlag(gen_cmd, "--rec-frac", gen.rec_frac, "Fraction of recovery scenarios");
  gen_cmd->add_option_function<std::vector<std::string>>(
      "--archetypes", [&gen](const std::vector<std::string>& v) { gen.archetypes = v; },
      "Archetype names (comma separated)")->delimiter(',');
  gen_cmd->add_option("--out", gen.out, "Dataset path (.jsonl)")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing outputs");

  TrainSftArgs sft;
  auto* sft_cmd = app.add_subcommand("train-sft", "Supervised fine-tuning (both stages)");
  sft_cmd->add_option("--data", sft.data, "Training dataset")->required();
  OptionalFlag(sft_cmd, "--config", sft.config, "Config file");
  sft_cmd->add_option("--out", sft.out, "Output directory")->required();
  sft_cmd->add_flag("--force", sft.force, "Overwrite an existing output directory");

  TrainRftArgs rft;
  auto* rft_cmd = app.add_subcommand("train-rft", "Reinforcement fine-tuning with GRPO");
  rft_cmd->add_option("--checkpoint", rft.checkpoint, "SFT checkpoint")->required();
  rft_cmd->add_option("--data", rft.data, "Dataset to sample the recipe from")->required();
  OptionalFlag(rft_cmd, "--recipe", rft.recipe, "Recipe file (JSON object of recipe fields)");
  OptionalFlag(rft_cmd, "--config", rft.config, "Config file");
  rft_cmd->add_option("--out", rft.out, "Output directory")->required();
  rft_cmd->add_flag("--force", rft.force, "Overwrite an existing output directory");
  rft_cmd->add_flag("--allow-config-mismatch", rft.allow_config_mismatch,
                    "Load a checkpoint created under a different config");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Evaluation dataset")->required();
  eval_cmd->add_option("--report", ev.report, "Report path (.json; a .txt table is written too)")
      ->required();
  OptionalFlag(eval_cmd, "--mode", ev.mode, "Benchmark mode: pdms or epdms");
  OptionalFlag(eval_cmd, "--planner", ev.planner, "Planner: ar or flow");
  OptionalFlag(eval_cmd, "--flow-steps", ev.flow_steps, "Flow integration steps");
  eval_cmd->add_flag("--force", ev.force, "Overwrite an existing report");

  ScoreArgs sc;
  auto* score_cmd = app.add_subcommand("score", "Score trajectories against their scenarios");
  score_cmd->add_option("--traj-file", sc.traj_file, "Trajectory file")->required();
  score_cmd->add_option("--scenario-file", sc.scenario_file, "Scenario dataset")->required();
  score_cmd->add_option("--report", sc.report, "Report path")->required();
  OptionalFlag(score_cmd, "--mode", sc.mode, "Benchmark mode: pdms or epdms");
  OptionalFlag(score_cmd, "--config", sc.config, "Config file (metric bounds)");
  score_cmd->add_flag("--force", sc.force, "Overwrite an existing report");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation sweep");
  ablate_cmd->add_option("--kind", ab.kind, "recipe, layers, history-init or shaping")
      ->required()
      ->check(CLI::IsMember({"recipe", "layers", "history-init", "shaping"}));
  OptionalFlag(ablate_cmd, "--config", ab.config, "Config file");
  ablate_cmd->add_option("--out", ab.out, "Output directory")->required();
  OptionalFlag(ablate_cmd, "--data", ab.data, "Shared dataset (generated from the config if absent)");
  OptionalFlag(ablate_cmd, "--checkpoint", ab.checkpoint, "Base checkpoint shared by the arms");
  ablate_cmd->add_option("--seeds", ab.seeds, "Seeds (comma separated)")->delimiter(',');
  ablate_cmd->add_option("--heldout", ab.heldout, "Held-out positives");
  ablate_cmd->add_flag("--force", ab.force, "Overwrite an existing output directory");

  BenchLatencyArgs bl;
  auto* bench_cmd = app.add_subcommand("bench-latency", "Time AR decoding against flow sampling");
  bench_cmd->add_option("--checkpoint", bl.checkpoint, "Checkpoint")->required();
  bench_cmd->add_option("--waypoints", bl.waypoints, "Waypoint counts (comma separated)")
      ->delimiter(',');
  bench_cmd->add_option("--repeats", bl.repeats, "Timed repeats per count (>= 3)");
  OptionalFlag(bench_cmd, "--data", bl.data, "Scenarios to time on");
  OptionalFlag(bench_cmd, "--out", bl.out, "JSON output path");
  bench_cmd->add_flag("--force", bl.force, "Overwrite an existing output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) CmdGenData(gen, std::cerr);
    if (sft_cmd->parsed()) CmdTrainSft(sft, std::cerr);
    if (rft_cmd->parsed()) CmdTrainRft(rft, std::cerr);
    if (eval_cmd->parsed()) CmdEval(ev, std::cerr);
    if (score_cmd->parsed()) CmdScore(sc, std::cerr);
    if (ablate_cmd->parsed()) CmdAblate(ab, std::cerr);
    if (bench_cmd->parsed()) CmdBenchLatency(bl, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
