"""Key-value (YAML) configuration files for the simulator and tracker.

Top-level keys are ``ScenarioConfig`` fields; an optional ``tracker``
mapping holds ``TrackerConfig`` fields::

    num_lanes: 4
    type_confusion_prob: 0.15
    tracker:
      gate: 0.9
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import yaml

from .sim import ConfigError, ScenarioConfig
from .tracker import TrackerConfig


def parse_config(data) -> tuple[ScenarioConfig, TrackerConfig]:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a key-value mapping")
    data = dict(data)
    tracker_data = data.pop("tracker", None) or {}
    if not isinstance(tracker_data, dict):
        raise ConfigError("tracker", "must be a key-value mapping")
    known = {f.name for f in fields(TrackerConfig)}
    unknown = set(tracker_data) - known
    if unknown:
        raise ConfigError(f"tracker.{sorted(unknown)[0]}", "unknown configuration key")
    return ScenarioConfig.from_dict(data), TrackerConfig(**tracker_data)


def load_config(path) -> tuple[ScenarioConfig, TrackerConfig]:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from exc
    return parse_config(data)
