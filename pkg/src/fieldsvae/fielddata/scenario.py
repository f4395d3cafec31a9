"""Generator scenario: a flat ``key = value`` document.

Lines starting with ``#`` and blank lines are ignored. Every key must be a
field of :class:`ScenarioConfig`; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    # corridor geometry, meters
    lane_width: float = 0.8
    robot_width: float = 0.31
    track_width: float = 0.26
    sensor_offset: float = 0.15
    row_start: float = -3.0
    row_length: float = 10.0
    stalk_spacing: float = 0.03
    stalk_size: float = 0.02
    stalk_jitter: float = 0.02
    # sensing
    range_noise: float = 0.03
    dropout: float = 0.05
    speed_noise: float = 0.02
    # motion
    dt: float = 0.1
    cruise_speed_min: float = 0.3
    cruise_speed_max: float = 0.5
    # schedule
    episodes_normal: int = 24
    episodes_collision: int = 24
    episodes_untraversable: int = 24
    episodes_traversable: int = 24
    normal_steps: int = 54
    pre_steps: int = 30
    anomaly_steps: int = 24
    drift_steps: int = 20

    def __post_init__(self):
        if self.lane_width <= self.robot_width:
            raise ConfigError(
                f"lane_width ({self.lane_width} m) must exceed robot_width ({self.robot_width} m)",
                "lane_width",
            )
        if self.lane_width / 2 - self.stalk_jitter - self.robot_width / 2 <= 0.05:
            raise ConfigError("corridor leaves no room for lateral motion", "lane_width")
        positive = ["track_width", "row_length", "stalk_spacing", "stalk_size", "dt",
                     "cruise_speed_min", "cruise_speed_max"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0", name)
        for name in ["range_noise", "stalk_jitter", "speed_noise", "sensor_offset"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", name)
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)", "dropout")
        if self.cruise_speed_max < self.cruise_speed_min:
            raise ConfigError("cruise_speed_max < cruise_speed_min", "cruise_speed_max")
        for name in ["episodes_normal", "episodes_collision", "episodes_untraversable",
                     "episodes_traversable", "normal_steps", "pre_steps", "anomaly_steps"]:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        if not 1 <= self.drift_steps < self.pre_steps:
            raise ConfigError("drift_steps must be in [1, pre_steps)", "drift_steps")
        travel = max(self.normal_steps, self.pre_steps + self.anomaly_steps) * self.dt * self.cruise_speed_max
        if self.row_start > -1.0 or self.row_start + self.row_length < travel + 3.0:
            raise ConfigError(
                f"rows [{self.row_start}, {self.row_start + self.row_length}] m do not cover the "
                f"longest episode travel of {travel:.2f} m plus 3 m of look-ahead",
                "row_length",
            )

    @property
    def episode_counts(self) -> dict[int, int]:
        return {0: self.episodes_normal, 1: self.episodes_collision,
                2: self.episodes_untraversable, 3: self.episodes_traversable}

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def parse_scenario(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key)
        values[key] = _coerce(key, value, lineno)
    return dataclasses.replace(base or ScenarioConfig(), **values)


def _coerce(key: str, value: str, lineno: int):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {kind}, got {value!r}", key) from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())
