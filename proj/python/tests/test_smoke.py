# Copyright 2026 The Driveflow Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json
import math

import numpy as np
import pytest

import driveflow


def test_generate_scenario_round_trip():
    line = driveflow.generate_scenario(3, driveflow.archetypes()[0], "positive")
    record = json.loads(line)
    assert record["label"] == "positive"
    assert driveflow.validate_scenario(line) is None
    assert line == driveflow.generate_scenario(3, driveflow.archetypes()[0], "positive")


def test_dataset_counts():
    lines = driveflow.generate_dataset_lines(5, 50, 0.1, 0.1)
    labels = [json.loads(l)["label"] for l in lines]
    assert len(lines) == 50
    assert labels.count("negative") == 5
    assert labels.count("recovery") == 5


def test_reference_scores_and_aggregates():
    line = driveflow.generate_scenario(11, driveflow.archetypes()[1])
    ref = driveflow.reference_trajectory(line)
    assert ref.shape == (driveflow.HORIZON_STEPS + 1, 3)
    report = driveflow.score(ref, line)
    assert report["valid"]
    assert report["pdms"] == pytest.approx(driveflow.pdms(report["subscores"]))
    assert 0.0 <= report["epdms"] <= 1.0
    assert driveflow.avg_distance(ref, ref) == 0.0
    assert driveflow.reference_match(ref, ref, 1.0) == 1.0


def test_pdms_gate():
    scores = dict(nc=0.0, dac=1, ddc=1, tlc=1, ep=1, ttc=1, lk=1, hc=1, ec=1, c=1)
    assert driveflow.pdms(scores) == 0.0


def test_grpo_math():
    adv = driveflow.group_advantage([1.0, 2.0, 3.0])
    assert np.mean(adv) == pytest.approx(0.0, abs=1e-12)
    assert driveflow.group_advantage([0.5, 0.5]) == [0.0, 0.0]
    assert driveflow.kl_term(math.log(2.0), 0.0) == pytest.approx(2 - math.log(2) - 1)
    assert driveflow.cot_penalty(3, 3, 0.1) == 0.5


def test_config_hash_stable():
    cfg = driveflow.default_config()
    assert driveflow.config_hash(cfg) == driveflow.config_hash(cfg)
    with pytest.raises(ValueError):
        driveflow.config_hash('{"rft": {"betta": 1}}')


def test_tiny_pipeline(tmp_path):
    cfg = json.loads(driveflow.default_config())
    cfg["data"]["count"] = 20
    cfg["policy"].update(d_model=16, n_layers=2, n_heads=2, d_bridge=8, codebook_size=16,
                         history_hidden=8)
    cfg["sft"].update(stage1_steps=5, stage2_steps=5)
    cfg["recipe"].update(warmup_count=2, positive=2, negative=1, recovery=1)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    data = str(tmp_path / "data.jsonl")
    driveflow.gen_data(data, config=str(cfg_path))
    driveflow.train_sft(data, str(tmp_path / "sft"), config=str(cfg_path))
    ckpt = str(tmp_path / "sft" / "checkpoint.json")
    driveflow.evaluate(ckpt, data, str(tmp_path / "report.json"))
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["rows"]) == 20
    policy = driveflow.Policy.load(ckpt)
    line = driveflow.dataset_lines(open(data).read())[0]
    plan = policy.plan(line, "flow")
    assert plan.shape[1] == 3
    assert np.all(np.isfinite(plan))
