"""Synthetic multi-lane highway scenarios.

A scenario is a straight corridor with ``num_lanes`` lanes, an ego vehicle
drifting sinusoidally inside one lane, a camera that reports lane-marking
sample points and types, a biased GNSS receiver and noisy odometry.

Lateral coordinates point to the left. Boundary ``j`` sits at ``j * lane_width``
so lane ``k`` lies between boundary ``k`` (right) and ``k + 1`` (left).
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

SAMPLE_RATE = 40
LOOKAHEAD = np.arange(5.0, 51.0, 5.0)
N_POINTS = len(LOOKAHEAD)

DRIFT_AMPLITUDE = 0.4
DRIFT_FREQUENCY = 0.05

# perception slots, relative to the lane the camera is in
EGO_LEFT, EGO_RIGHT, ADJ_LEFT, ADJ_RIGHT = range(4)
CHANNEL_NAMES = ("ego_left", "ego_right", "adjacent_left", "adjacent_right")
# boundary index offset of each slot from the lane index
SLOT_OFFSETS = np.array([1, 0, 2, -1])


class LaneMarkingType(enum.IntEnum):
    SOLID = 0
    DASHED = 1
    DOUBLE = 2
    BOTTS_DOTS = 3


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ScenarioConfig:
    num_lanes: int = 4
    lane_width: float = 3.5
    duration: float = 30.0
    sample_rate: int = SAMPLE_RATE
    point_noise_sigma: float = 0.05
    type_confusion_prob: float = 0.15
    gnss_bias_range: float = 5.25
    gnss_noise_sigma: float = 0.5
    missing_prob: float = 0.5
    # mean length of an occlusion episode; 0 drops each channel independently per frame
    missing_burst_s: float = 4.0
    seed: int = 0
    speed: float = 25.0
    speed_noise_sigma: float = 0.1
    yaw_rate_noise_sigma: float = 0.001
    # None covers the whole drive plus the camera lookahead
    map_length: Optional[float] = None

    def validate(self) -> None:
        if int(self.num_lanes) != self.num_lanes or self.num_lanes < 2:
            raise ConfigError("num_lanes", f"must be an integer >= 2, got {self.num_lanes}")
        if not self.lane_width > 0:
            raise ConfigError("lane_width", f"must be positive, got {self.lane_width}")
        if not self.duration > 0:
            raise ConfigError("duration", f"must be positive, got {self.duration}")
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError("sample_rate", f"fixed at {SAMPLE_RATE} Hz, got {self.sample_rate}")
        for name in ("type_confusion_prob", "missing_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"probability outside [0, 1]: {value}")
        for name in ("point_noise_sigma", "gnss_bias_range", "gnss_noise_sigma",
                     "speed_noise_sigma", "yaw_rate_noise_sigma", "missing_burst_s"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be non-negative, got {getattr(self, name)}")
        if not self.speed > 0:
            raise ConfigError("speed", f"must be positive, got {self.speed}")
        if self.map_length is not None and not self.map_length > 0:
            raise ConfigError("map_length", f"must be positive, got {self.map_length}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must fit in 64 unsigned bits, got {self.seed}")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        config = cls(**data)
        config.validate()
        return config


@dataclass(frozen=True)
class MapModel:
    """Straight-corridor HD map: one constant-offset polyline per boundary."""

    boundary_offsets: np.ndarray
    boundary_types: tuple
    map_extent: float

    @property
    def num_lanes(self) -> int:
        return len(self.boundary_offsets) - 1

    @property
    def lane_width(self) -> float:
        return float(self.boundary_offsets[1] - self.boundary_offsets[0])

    @property
    def boundaries(self) -> list:
        """Polylines as ``(station, lateral)`` vertex arrays."""
        return [np.array([[0.0, b], [self.map_extent, b]]) for b in self.boundary_offsets]

    def lane_center(self, lane: int) -> float:
        return float(0.5 * (self.boundary_offsets[lane] + self.boundary_offsets[lane + 1]))

    def lane_centers(self) -> np.ndarray:
        return 0.5 * (self.boundary_offsets[:-1] + self.boundary_offsets[1:])

    def has_boundary(self, index: int) -> bool:
        return 0 <= index < len(self.boundary_offsets)

    def to_dict(self) -> dict:
        return {
            "boundary_offsets": [float(b) for b in self.boundary_offsets],
            "boundary_types": [LaneMarkingType(t).name.lower() for t in self.boundary_types],
            "map_extent": float(self.map_extent),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MapModel":
        return cls(
            boundary_offsets=np.asarray(data["boundary_offsets"], dtype=float),
            boundary_types=tuple(LaneMarkingType[t.upper()] for t in data["boundary_types"]),
            map_extent=float(data["map_extent"]),
        )


@dataclass(frozen=True)
class PerceivedMarking:
    points: Optional[np.ndarray]  # (N_POINTS, 2) of (forward, lateral) in ego frame
    type: Optional[LaneMarkingType]


@dataclass(frozen=True)
class SensorFrame:
    t: int
    perceived: dict  # channel name -> PerceivedMarking
    gnss: tuple
    odometry: tuple


@dataclass
class SequenceRecord:
    """One simulated drive.

    Perception is stored column-wise: ``points[i, c]`` holds the lateral
    offsets of slot ``c`` at frame ``i`` (NaN when absent) and ``types[i, c]``
    the perceived type code (-1 when absent).
    """

    scenario_id: int
    config: ScenarioConfig
    map: MapModel
    truth_lane: int
    truth_pose: np.ndarray  # (L, 3) station, lateral, heading
    points: np.ndarray  # (L, 4, N_POINTS)
    types: np.ndarray  # (L, 4)
    gnss: np.ndarray  # (L, 2)
    odometry: np.ndarray  # (L, 2) speed, yaw rate over the interval ending at the frame

    def __len__(self) -> int:
        return len(self.truth_pose)

    def frame(self, i: int) -> SensorFrame:
        perceived = {}
        for c, name in enumerate(CHANNEL_NAMES):
            lat = self.points[i, c]
            pts = None if np.isnan(lat).any() else np.column_stack([LOOKAHEAD, lat])
            code = int(self.types[i, c])
            perceived[name] = PerceivedMarking(pts, None if code < 0 else LaneMarkingType(code))
        return SensorFrame(
            t=i,
            perceived=perceived,
            gnss=(float(self.gnss[i, 0]), float(self.gnss[i, 1])),
            odometry=(float(self.odometry[i, 0]), float(self.odometry[i, 1])),
        )

    @property
    def frames(self) -> list:
        return [self.frame(i) for i in range(len(self))]


def build_map(config: ScenarioConfig, rng: np.random.Generator) -> MapModel:
    n = config.num_lanes
    types = [LaneMarkingType.DASHED] * (n + 1)
    types[0] = types[-1] = LaneMarkingType.SOLID
    special = int(rng.integers(n + 1))
    types[special] = LaneMarkingType(int(rng.choice([LaneMarkingType.DOUBLE, LaneMarkingType.BOTTS_DOTS])))
    extent = config.map_length
    if extent is None:
        extent = config.speed * config.duration + LOOKAHEAD[-1] + 10.0
    return MapModel(np.arange(n + 1) * config.lane_width, tuple(types), float(extent))


def _dropouts(m: int, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """(m, 8) missing mask; each channel is missing with marginal probability ``missing_prob``.

    With ``missing_burst_s > 0`` each of the 4 marking slots follows a two-state
    occlusion chain (stationary occlusion rate ``missing_prob``, mean episode
    length ``missing_burst_s``) that hides both its points and its type.
    """
    p = config.missing_prob
    if config.missing_burst_s <= 0 or m == 1 or p in (0.0, 1.0):
        return rng.random((m, 8)) < p
    leave = min(1.0, config.dt / config.missing_burst_s)
    enter = min(1.0, leave * p / (1.0 - p))
    u = rng.random((m, 4))
    state = np.empty((m, 4), dtype=bool)
    state[0] = u[0] < p
    for i in range(1, m):
        state[i] = np.where(state[i - 1], u[i] >= leave, u[i] < enter)
    return np.concatenate([state, state], axis=1)


def _perceive_many(poses: np.ndarray, map: MapModel, config: ScenarioConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Perception for a batch of truth poses; returns (points, types)."""
    m = len(poses)
    station, lateral, heading = poses[:, 0], poses[:, 1], poses[:, 2]
    noise = rng.normal(0.0, 1.0, size=(m, 4, N_POINTS)) * config.point_noise_sigma
    confuse = rng.random((m, 4)) < config.type_confusion_prob
    shift = rng.integers(1, len(LaneMarkingType), size=(m, 4))
    drop = _dropouts(m, config, rng)

    lane = np.clip(np.floor(lateral / map.lane_width), 0, map.num_lanes - 1).astype(int)
    bidx = lane[:, None] + SLOT_OFFSETS[None, :]
    exists = (bidx >= 0) & (bidx <= map.num_lanes)
    b = map.boundary_offsets[np.clip(bidx, 0, map.num_lanes)]

    cos_h, sin_h = np.cos(heading), np.sin(heading)
    lat = ((b[:, :, None] - lateral[:, None, None] - LOOKAHEAD[None, None, :] * sin_h[:, None, None])
           / cos_h[:, None, None]) + noise
    map_types = np.asarray(map.boundary_types, dtype=int)[np.clip(bidx, 0, map.num_lanes)]
    types = np.where(confuse, (map_types + shift) % len(LaneMarkingType), map_types)

    on_map = station <= map.map_extent
    geom_ok = exists & ~drop[:, :4] & on_map[:, None]
    type_ok = exists & ~drop[:, 4:] & on_map[:, None]
    points = np.where(geom_ok[:, :, None], lat, np.nan)
    types = np.where(type_ok, types, -1)
    return points, types


def perceive(truth_pose, map: MapModel, config: ScenarioConfig, rng: np.random.Generator) -> SensorFrame:
    """Simulate one camera frame at ``truth_pose = (station, lateral, heading)``.

    A pose beyond the mapped range yields a frame with every channel missing.
    """
    pose = np.asarray(truth_pose, dtype=float).reshape(1, 3)
    points, types = _perceive_many(pose, map, config, rng)
    gnss = (float(pose[0, 0]), float(pose[0, 1]))
    record = SequenceRecord(-1, config, map, -1, pose, points, types,
                            np.array([gnss]), np.array([[config.speed, 0.0]]))
    return record.frame(0)


def truth_trajectory(config: ScenarioConfig, lane: int, phase: float) -> np.ndarray:
    """In-lane sinusoidal drift sampled at the frame rate.

    Heading is chosen so that ``lateral[i+1] = lateral[i] + v sin(heading[i]) dt``
    holds exactly, which keeps the noise-free motion model consistent.
    """
    n, dt, v = config.n_frames, config.dt, config.speed
    k = np.arange(n + 1)
    center = (lane + 0.5) * config.lane_width
    lateral = center + DRIFT_AMPLITUDE * np.sin(2 * math.pi * DRIFT_FREQUENCY * k * dt + phase)
    heading = np.arcsin(np.diff(lateral) / (v * dt))
    station = v * dt * k[:n]
    return np.column_stack([station, lateral[:n], heading])


def generate_scenario(config: ScenarioConfig, scenario_id: int = 0) -> SequenceRecord:
    """Deterministically generate one drive from ``config`` (seeded by ``config.seed``)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    map = build_map(config, rng)
    truth_lane = int(rng.integers(config.num_lanes))
    phase = float(rng.uniform(0.0, 2 * math.pi))
    bias = float(rng.uniform(-config.gnss_bias_range, config.gnss_bias_range)) if config.gnss_bias_range > 0 else 0.0

    pose = truth_trajectory(config, truth_lane, phase)
    pose = pose[pose[:, 0] <= map.map_extent]
    m = len(pose)

    points, types = _perceive_many(pose, map, config, rng)
    gnss = pose[:, :2] + rng.normal(0.0, 1.0, size=(m, 2)) * config.gnss_noise_sigma
    gnss[:, 1] += bias

    yaw_rate = np.zeros(m)
    yaw_rate[1:] = np.diff(pose[:, 2]) / config.dt
    odometry = np.column_stack([np.full(m, config.speed), yaw_rate])
    odometry += rng.normal(0.0, 1.0, size=(m, 2)) * [config.speed_noise_sigma, config.yaw_rate_noise_sigma]

    return SequenceRecord(scenario_id, config, map, truth_lane, pose, points, types, gnss, odometry)


def scenario_config_for(base: ScenarioConfig, seed: int, index: int) -> ScenarioConfig:
    """Per-scenario config with a seed derived from ``(seed, index)``."""
    child = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return replace(base, seed=int(child[0]) << 32 | int(child[1]))


def generate_batch(base: ScenarioConfig, count: int, seed: int) -> list:
    """``count`` scenarios with ids ``seed * 100000 + i``."""
    return [generate_scenario(scenario_config_for(base, seed, i), scenario_id=seed * 100000 + i)
            for i in range(count)]
