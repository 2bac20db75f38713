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

#include "driveflow/config.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace driveflow {
namespace {

using nlohmann::json;

// Reads fields from one section, rejecting unknown keys.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: section '" + name_ + "' must be an object");
  }

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  template <typename T, typename Parse>
  void GetEnum(const char* key, T& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Get(key, s);
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  const json* Child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void Finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + name_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json MetricsJson(const MetricsConfig& m) {
  return {{"max_accel", m.max_accel},         {"max_jerk", m.max_jerk},
          {"ttc_horizon", m.ttc_horizon},     {"ttc_step", m.ttc_step},
          {"ec_tolerance", m.ec_tolerance},   {"lane_width", m.lane_width},
          {"lane_change_window", m.lane_change_window}};
}

void ReadMetrics(const json& j, const std::string& name, MetricsConfig& m) {
  Section s(j, name);
  s.Get("max_accel", m.max_accel);
  s.Get("max_jerk", m.max_jerk);
  s.Get("ttc_horizon", m.ttc_horizon);
  s.Get("ttc_step", m.ttc_step);
  s.Get("ec_tolerance", m.ec_tolerance);
  s.Get("lane_width", m.lane_width);
  s.Get("lane_change_window", m.lane_change_window);
  s.Finish();
}

}  // namespace

std::string ConfigToJson(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["benchmark_mode"] = std::string(ToString(c.benchmark_mode));
  const PolicyConfig& p = c.policy;
  j["policy"] = {{"d_model", p.d_model},
                 {"n_layers", p.n_layers},
                 {"n_heads", p.n_heads},
                 {"ff_mult", p.ff_mult},
                 {"d_bridge", p.d_bridge},
                 {"n_queries", p.n_queries},
                 {"horizon", p.horizon},
                 {"codebook_size", p.codebook_size},
                 {"max_context", p.max_context},
                 {"max_reason", p.max_reason},
                 {"sparse_interval", p.sparse_interval},
                 {"history_hidden", p.history_hidden},
                 {"flow_steps", p.flow_steps},
                 {"tau_shift", p.tau_shift},
                 {"noise_std", p.noise_std},
                 {"history_init", p.history_init}};
  j["metrics"] = MetricsJson(c.metrics);
  j["sft"] = {{"stage1_steps", c.sft.stage1_steps}, {"stage2_steps", c.sft.stage2_steps},
              {"batch_size", c.sft.batch_size},     {"lr_stage1", c.sft.lr_stage1},
              {"lr_stage2", c.sft.lr_stage2},       {"grad_clip", c.sft.grad_clip},
              {"seed", c.sft.seed}};
  j["rft"] = {{"group_size", c.rft.group_size}, {"eps_clip", c.rft.eps_clip},
              {"beta", c.rft.beta},             {"lr", c.rft.lr},
              {"temperature", c.rft.temperature}, {"grad_clip", c.rft.grad_clip},
              {"seed", c.rft.seed}};
  j["reward"] = {{"lambda_n", c.reward.lambda_n}, {"lambda_r", c.reward.lambda_r},
                 {"lambda_c", c.reward.lambda_c}, {"delta", c.reward.delta},
                 {"l_tol", c.reward.l_tol},       {"gamma", c.reward.gamma},
                 {"kappa_align", c.reward.kappa_align}};
  j["recipe"] = {{"warmup_count", c.recipe.warmup_count}, {"positive", c.recipe.positive},
                 {"negative", c.recipe.negative},         {"recovery", c.recipe.recovery},
                 {"seed", c.recipe.seed}};
  std::vector<std::string> arch;
  for (Archetype a : c.data.archetypes) arch.emplace_back(ToString(a));
  j["data"] = {{"count", c.data.count}, {"neg_frac", c.data.neg_frac},
               {"rec_frac", c.data.rec_frac}, {"archetypes", arch}};
  j["eval"] = {{"planner", std::string(ToString(c.eval.planner))},
               {"flow_steps", c.eval.flow_steps}};
  return j.dump(2) + "\n";
}

RunConfig ConfigFromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  root.Get("seed", c.seed);
  root.GetEnum("benchmark_mode", c.benchmark_mode, ParseBenchmarkMode);
  if (const json* s = root.Child("policy")) {
    Section sec(*s, "policy");
    PolicyConfig& p = c.policy;
    sec.Get("d_model", p.d_model);
    sec.Get("n_layers", p.n_layers);
    sec.Get("n_heads", p.n_heads);
    sec.Get("ff_mult", p.ff_mult);
    sec.Get("d_bridge", p.d_bridge);
    sec.Get("n_queries", p.n_queries);
    sec.Get("horizon", p.horizon);
    sec.Get("codebook_size", p.codebook_size);
    sec.Get("max_context", p.max_context);
    sec.Get("max_reason", p.max_reason);
    sec.Get("sparse_interval", p.sparse_interval);
    sec.Get("history_hidden", p.history_hidden);
    sec.Get("flow_steps", p.flow_steps);
    sec.Get("tau_shift", p.tau_shift);
    sec.Get("noise_std", p.noise_std);
    sec.Get("history_init", p.history_init);
    sec.Finish();
  }
  if (const json* s = root.Child("metrics")) ReadMetrics(*s, "metrics", c.metrics);
  if (const json* s = root.Child("sft")) {
    Section sec(*s, "sft");
    sec.Get("stage1_steps", c.sft.stage1_steps);
    sec.Get("stage2_steps", c.sft.stage2_steps);
    sec.Get("batch_size", c.sft.batch_size);
    sec.Get("lr_stage1", c.sft.lr_stage1);
    sec.Get("lr_stage2", c.sft.lr_stage2);
    sec.Get("grad_clip", c.sft.grad_clip);
    sec.Get("seed", c.sft.seed);
    sec.Finish();
  }
  if (const json* s = root.Child("rft")) {
    Section sec(*s, "rft");
    sec.Get("group_size", c.rft.group_size);
    sec.Get("eps_clip", c.rft.eps_clip);
    sec.Get("beta", c.rft.beta);
    sec.Get("lr", c.rft.lr);
    sec.Get("temperature", c.rft.temperature);
    sec.Get("grad_clip", c.rft.grad_clip);
    sec.Get("seed", c.rft.seed);
    sec.Finish();
  }
  if (const json* s = root.Child("reward")) {
    Section sec(*s, "reward");
    sec.Get("lambda_n", c.reward.lambda_n);
    sec.Get("lambda_r", c.reward.lambda_r);
    sec.Get("lambda_c", c.reward.lambda_c);
    sec.Get("delta", c.reward.delta);
    sec.Get("l_tol", c.reward.l_tol);
    sec.Get("gamma", c.reward.gamma);
    sec.Get("kappa_align", c.reward.kappa_align);
    sec.Finish();
  }
  if (const json* s = root.Child("recipe")) {
    Section sec(*s, "recipe");
    sec.Get("warmup_count", c.recipe.warmup_count);
    sec.Get("positive", c.recipe.positive);
    sec.Get("negative", c.recipe.negative);
    sec.Get("recovery", c.recipe.recovery);
    sec.Get("seed", c.recipe.seed);
    sec.Finish();
  }
  if (const json* s = root.Child("data")) {
    Section sec(*s, "data");
    sec.Get("count", c.data.count);
    sec.Get("neg_frac", c.data.neg_frac);
    sec.Get("rec_frac", c.data.rec_frac);
    std::vector<std::string> arch;
    sec.Get("archetypes", arch);
    if (s->contains("archetypes")) {
      c.data.archetypes.clear();
      for (const std::string& a : arch) c.data.archetypes.push_back(ParseArchetype(a));
    }
    sec.Finish();
  }
  if (const json* s = root.Child("eval")) {
    Section sec(*s, "eval");
    sec.GetEnum("planner", c.eval.planner, ParsePlannerKind);
    sec.Get("flow_steps", c.eval.flow_steps);
    sec.Finish();
  }
  root.Finish();
  ValidatePolicyConfig(c.policy);
  if (c.data.count < 0 || c.data.neg_frac < 0 || c.data.rec_frac < 0 ||
      c.data.neg_frac + c.data.rec_frac > 1.0) {
    throw std::invalid_argument("config: data fractions must be non-negative and sum to <= 1");
  }
  if (c.recipe.warmup_count < 0 || c.recipe.positive < 0 || c.recipe.negative < 0 ||
      c.recipe.recovery < 0) {
    throw std::invalid_argument("config: recipe counts must be non-negative");
  }
  return Normalize(c);
}

RunConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ConfigFromJson(ss.str());
}

std::string ConfigHash(const RunConfig& config) {
  const std::string text = ConfigToJson(Normalize(config));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(HashBytes(text.data(), text.size())));
  return buf;
}

RunConfig Normalize(RunConfig config) {
  config.reward.mode = config.benchmark_mode;
  config.reward.metrics = config.metrics;
  return config;
}

}  // namespace driveflow
