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

"""Python bindings for the driveflow C++ core."""

import json

from ._driveflow import *  # noqa: F401,F403
from ._driveflow import generate_dataset as _generate_dataset
from ._driveflow import generate_scenario as _generate_scenario


def scenario_dict(line):
    """Parses a scenario JSON line into a dict."""
    return json.loads(line)


def generate_scenario_dict(seed, archetype, label="positive"):
    return scenario_dict(_generate_scenario(seed, archetype, label))


def dataset_lines(text):
    """Returns the scenario records of a serialized dataset."""
    lines = [l for l in text.splitlines() if l.strip()]
    return lines[1:-1]


def generate_dataset_lines(seed, count, neg_frac=0.1, rec_frac=0.1):
    return dataset_lines(_generate_dataset(seed, count, neg_frac, rec_frac))
