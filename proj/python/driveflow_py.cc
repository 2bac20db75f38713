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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driveflow/commands.h"
#include "driveflow/config.h"
#include "driveflow/dataio.h"
#include "driveflow/metrics.h"
#include "driveflow/microworld.h"
#include "driveflow/policy.h"
#include "driveflow/training.h"

namespace py = pybind11;

namespace driveflow {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

RowMat TrajectoryToArray(const Trajectory& t) {
  RowMat m(static_cast<Eigen::Index>(t.size()), 3);
  for (size_t i = 0; i < t.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) << t.waypoints[i].x, t.waypoints[i].y, t.waypoints[i].heading;
  }
  return m;
}

Trajectory ArrayToTrajectory(const RowMat& m, int t0) {
  Trajectory t;
  t.t0 = t0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) t.waypoints.push_back({m(i, 0), m(i, 1), m(i, 2)});
  return t;
}

py::dict SubScoresToDict(const SubScores& s) {
  py::dict d;
  d["nc"] = s.nc;
  d["dac"] = s.dac;
  d["ddc"] = s.ddc;
  d["tlc"] = s.tlc;
  d["ep"] = s.ep;
  d["ttc"] = s.ttc;
  d["lk"] = s.lk;
  d["hc"] = s.hc;
  d["ec"] = s.ec;
  d["c"] = s.c;
  return d;
}

SubScores SubScoresFromDict(const py::dict& d) {
  SubScores s;
  auto get = [&](const char* key, double& out) {
    if (d.contains(key)) out = d[key].cast<double>();
  };
  get("nc", s.nc);
  get("dac", s.dac);
  get("ddc", s.ddc);
  get("tlc", s.tlc);
  get("ep", s.ep);
  get("ttc", s.ttc);
  get("lk", s.lk);
  get("hc", s.hc);
  get("ec", s.ec);
  get("c", s.c);
  return s;
}

// Runs a command, returning its log text.
template <typename Args>
std::string RunCommand(void (*cmd)(const Args&, std::ostream&), const Args& args) {
  std::ostringstream log;
  cmd(args, log);
  return log.str();
}

}  // namespace
}  // namespace driveflow

PYBIND11_MODULE(_driveflow, m) {
  using namespace driveflow;
  m.doc() = "Driving policy microworld, metrics and training bindings";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CommandError>(m, "CommandError", PyExc_RuntimeError);

  m.attr("HORIZON_STEPS") = kHorizonSteps;
  m.attr("STEP_SECONDS") = kStepSeconds;

  m.def("archetypes", [] {
    std::vector<std::string> out;
    for (Archetype a : AllArchetypes()) out.emplace_back(ToString(a));
    return out;
  });
  m.def(
      "generate_scenario",
      [](uint64_t seed, const std::string& archetype, const std::string& label) {
        return ScenarioToJsonLine(GenerateScenario(seed, ParseArchetype(archetype), ParseLabel(label)));
      },
      py::arg("seed"), py::arg("archetype"), py::arg("label") = "positive");
  m.def(
      "generate_dataset",
      [](uint64_t seed, int count, double neg_frac, double rec_frac) {
        return SerializeDataset(GenerateDataset(seed, count, neg_frac, rec_frac, AllArchetypes()));
      },
      py::arg("seed"), py::arg("count"), py::arg("neg_frac") = 0.1, py::arg("rec_frac") = 0.1);
  m.def("validate_scenario", [](const std::string& line) {
    return ValidateScenario(ScenarioFromJsonLine(line));
  });
  m.def("reference_trajectory", [](const std::string& line) {
    return TrajectoryToArray(ScenarioFromJsonLine(line).reference);
  });

  m.def(
      "score",
      [](const RowMat& traj, const std::string& scenario_line) {
        const Scenario s = ScenarioFromJsonLine(scenario_line);
        const ScoreReport r = Score(ArrayToTrajectory(traj, s.reference.t0), s);
        py::dict d;
        d["subscores"] = SubScoresToDict(r.subscores);
        d["pdms"] = r.pdms;
        d["epdms"] = r.epdms;
        d["valid"] = r.valid;
        return d;
      },
      py::arg("trajectory"), py::arg("scenario"));
  m.def("pdms", [](const py::dict& s) { return Pdms(SubScoresFromDict(s)); });
  m.def("epdms", [](const py::dict& agent, const py::dict& human) {
    return Epdms(SubScoresFromDict(agent), SubScoresFromDict(human));
  });
  m.def("avg_distance", [](const RowMat& a, const RowMat& b) {
    return AvgDistance(ArrayToTrajectory(a, 0), ArrayToTrajectory(b, 0));
  });
  m.def("reference_match", [](const RowMat& a, const RowMat& b, double delta) {
    return ReferenceMatch(ArrayToTrajectory(a, 0), ArrayToTrajectory(b, 0), delta);
  });
  m.def("cot_penalty", &CotPenalty, py::arg("length"), py::arg("l_tol"), py::arg("gamma"));
  m.def("group_advantage", &GroupAdvantage, py::arg("rewards"));
  m.def("kl_term", &KlTerm, py::arg("logp_ref"), py::arg("logp_current"));

  m.def("default_config", [] { return ConfigToJson(RunConfig{}); });
  m.def("config_hash", [](const std::string& json) { return ConfigHash(ConfigFromJson(json)); });

  py::class_<Policy>(m, "Policy")
      .def_static("load", [](const std::string& path) {
        return PolicyFromCheckpoint(LoadCheckpoint(path));
      })
      .def(
          "plan",
          [](const Policy& p, const std::string& scenario_line, const std::string& planner,
             int flow_steps) {
            const Scenario s = ScenarioFromJsonLine(scenario_line);
            Trajectory t;
            if (planner == "flow") {
              t = p.PlanFlow(s, flow_steps);
            } else if (planner == "ar") {
              t = p.PlanAutoregressive(s, DecodeOptions{});
            } else {
              throw py::value_error("planner must be 'ar' or 'flow'");
            }
            return TrajectoryToArray(t);
          },
          py::arg("scenario"), py::arg("planner") = "flow", py::arg("flow_steps") = -1);

  m.def(
      "gen_data",
      [](const std::string& out, std::optional<std::string> config, std::optional<uint64_t> seed,
         std::optional<int> count, bool force) {
        GenDataArgs a;
        a.out = out;
        a.config = config;
        a.seed = seed;
        a.count = count;
        a.force = force;
        return RunCommand(&CmdGenData, a);
      },
      py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("count") = py::none(), py::arg("force") = false);
  m.def(
      "train_sft",
      [](const std::string& data, const std::string& out, std::optional<std::string> config,
         bool force) {
        return RunCommand(&CmdTrainSft, TrainSftArgs{data, config, out, force});
      },
      py::arg("data"), py::arg("out"), py::arg("config") = py::none(), py::arg("force") = false);
  m.def(
      "train_rft",
      [](const std::string& checkpoint, const std::string& data, const std::string& out,
         std::optional<std::string> config, std::optional<std::string> recipe, bool force) {
        TrainRftArgs a;
        a.checkpoint = checkpoint;
        a.data = data;
        a.out = out;
        a.config = config;
        a.recipe = recipe;
        a.force = force;
        return RunCommand(&CmdTrainRft, a);
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("out"), py::arg("config") = py::none(),
      py::arg("recipe") = py::none(), py::arg("force") = false);
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& data, const std::string& report,
         std::optional<std::string> planner, bool force) {
        EvalArgs a;
        a.checkpoint = checkpoint;
        a.data = data;
        a.report = report;
        a.planner = planner;
        a.force = force;
        return RunCommand(&CmdEval, a);
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("report"), py::arg("planner") = py::none(),
      py::arg("force") = false);
}
