"""Episode planning and simulation for the four operating modes.

Each episode is a kinematic pose sequence through a straight corridor between
two crop rows, with wheel-encoder speeds and an anomaly schedule. Labels are
a pure function of the schedule: steps before ``onset`` are normal, the rest
carry the episode's class. Episodes end when the anomaly resolves.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..numeric import derive_seed, make_rng
from .dataset import Dataset
from .scenario import ScenarioConfig
from .scene import (
    MAX_RANGE_M,
    MIN_RANGE_M,
    N_BEAMS,
    SceneError,
    box_segments,
    cast_rays,
    stalk_row,
)

NORMAL, COLLISION, UNTRAVERSABLE, TRAVERSABLE = range(4)
CLASS_NAMES = ("normal", "row collision", "untraversable", "traversable")
KIND_TAGS = ("normal", "collision", "untraversable", "traversable")


@dataclass
class Obstacle:
    label: int
    segments: np.ndarray
    near_x: float
    # traversable objects pass under the chassis and leave the scan plane
    hide_when_passed: bool = False


@dataclass
class EpisodeConfig:
    run_id: str
    kind: int
    onset: int
    poses: np.ndarray  # (T, 3): x, y, heading
    wheel: np.ndarray  # (T, 2): v_left, v_right in m/s
    rows: np.ndarray  # (M, 4) row segments
    obstacles: list[Obstacle] = field(default_factory=list)
    lane_width: float = 0.8
    robot_width: float = 0.31
    sensor_offset: float = 0.15
    range_noise: float = 0.03
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.lane_width <= self.robot_width:
            raise SceneError(f"lane width {self.lane_width} m must exceed robot width {self.robot_width} m")
        n = len(self.poses)
        if self.poses.shape != (n, 3) or self.wheel.shape != (n, 2) or n == 0:
            raise SceneError("poses must be (T, 3) and wheel speeds (T, 2) with T >= 1")
        if not 0 <= self.onset <= n:
            raise SceneError(f"onset {self.onset} outside episode of {n} steps")
        if self.kind == NORMAL and self.onset != n:
            raise SceneError("normal episodes have no onset")
        self.row_x = (float(self.rows[:, [0, 2]].min()), float(self.rows[:, [0, 2]].max()))

    @property
    def n_steps(self) -> int:
        return len(self.poses)

    @property
    def labels(self) -> np.ndarray:
        t = np.arange(self.n_steps)
        return np.where(t >= self.onset, self.kind, NORMAL).astype(np.int64)

    def sensor_origin(self, pose) -> tuple[float, float]:
        x, y, h = pose
        return x + self.sensor_offset * np.cos(h), y + self.sensor_offset * np.sin(h)

    def segments_for(self, sensor_x: float) -> np.ndarray:
        parts = [self.rows]
        for ob in self.obstacles:
            if ob.hide_when_passed and sensor_x >= ob.near_x:
                continue
            parts.append(ob.segments)
        return np.concatenate(parts, axis=0)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.run_id}|{self.kind}|{self.onset}|{self.lane_width}|{self.robot_width}|"
                 f"{self.sensor_offset}|{self.range_noise}|{self.dropout}|{self.seed}".encode())
        for arr in [self.poses, self.wheel, self.rows, *(o.segments for o in self.obstacles)]:
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def simulate_scan(config: EpisodeConfig, pose, rng: np.random.Generator | None = None) -> np.ndarray:
    """Raw 1080-beam scan in meters for one pose.

    With ``rng=None`` the scan is noise-free. Otherwise Gaussian range noise is
    added to returns and dropped beams read the maximum range. The noise and
    dropout draws are consumed for every beam so the stream position does not
    depend on the scene.
    """
    ox, oy = config.sensor_origin(pose)
    half = config.lane_width / 2
    if not (abs(oy) < half and config.row_x[0] <= ox <= config.row_x[1]):
        raise SceneError(f"sensor at ({ox:.3f}, {oy:.3f}) lies outside the corridor")
    ranges = cast_rays((ox, oy), float(pose[2]), config.segments_for(ox))
    if rng is None:
        return ranges
    noise = rng.standard_normal(N_BEAMS) * config.range_noise
    drop = rng.random(N_BEAMS) < config.dropout
    hit = ranges < MAX_RANGE_M
    ranges = np.where(hit, np.clip(ranges + noise, MIN_RANGE_M, MAX_RANGE_M), ranges)
    ranges[drop] = MAX_RANGE_M
    return ranges


# -- planning -------------------------------------------------------------------

def _wobble(n: int, x0: float, v: float, sc: ScenarioConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    amp = rng.uniform(0.01, 0.05)
    period = rng.uniform(30.0, 80.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    y0 = rng.uniform(-0.03, 0.03)
    t = np.arange(n + 1)
    x = x0 + v * sc.dt * t
    y = y0 + amp * np.sin(2 * np.pi * t / period + phase)
    return x, y


def _headings(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Heading of each step toward the next position; held while stationary."""
    dx, dy = np.diff(x), np.diff(y)
    h = np.arctan2(dy, dx)
    for i in np.flatnonzero(np.hypot(dx, dy) < 1e-9):
        h[i] = h[i - 1] if i else 0.0
    return np.append(h, h[-1])


def _wheels(x: np.ndarray, y: np.ndarray, h: np.ndarray, sc: ScenarioConfig, rng) -> np.ndarray:
    """Encoder speeds reproducing the motion between consecutive poses, plus noise."""
    v = np.hypot(np.diff(x), np.diff(y)) / sc.dt
    omega = np.diff(np.unwrap(h)) / sc.dt
    v, omega = np.append(v, v[-1]), np.append(omega, 0.0)
    vl = v - omega * sc.track_width / 2
    vr = v + omega * sc.track_width / 2
    return np.stack([vl, vr], axis=1) + rng.normal(0.0, sc.speed_noise, size=(len(v), 2))


def _plan_normal(sc: ScenarioConfig, rng):
    n = sc.normal_steps
    v = rng.uniform(sc.cruise_speed_min, sc.cruise_speed_max)
    x, y = _wobble(n, 0.0, v, sc, rng)
    h = _headings(x, y)
    wheel = _wheels(x, y, h, sc, rng)[:n]
    return np.stack([x, y, h], 1)[:n], wheel, n, []


def _contact_offset(sc: ScenarioConfig) -> float:
    return sc.lane_width / 2 - sc.stalk_jitter - sc.robot_width / 2


def _plan_collision(sc: ScenarioConfig, rng):
    pre, n_an, drift = sc.pre_steps, sc.anomaly_steps, sc.drift_steps
    v = rng.uniform(sc.cruise_speed_min, sc.cruise_speed_max)
    side = 1.0 if rng.random() < 0.5 else -1.0
    n_cruise = pre - drift
    x, y = _wobble(n_cruise, 0.0, v, sc, rng)
    # drift: heading ramps linearly so the body edge meets the row exactly at step `pre`
    dy = side * _contact_offset(sc) - y[n_cruise]
    k = np.arange(1, drift + 1) / drift
    lo, hi = 0.0, 1.5
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if v * sc.dt * np.sum(np.sin(mid * k)) < abs(dy):
            lo = mid
        else:
            hi = mid
    tilt = side * 0.5 * (lo + hi)
    hd = tilt * k
    xd = x[n_cruise] + np.cumsum(v * sc.dt * np.cos(hd))
    yd = y[n_cruise] + np.sign(dy) * np.cumsum(v * sc.dt * np.abs(np.sin(hd)))
    yd[-1] = side * _contact_offset(sc)
    # pinned against the row: almost no progress, wheels fight to steer away
    creep = np.cumsum(rng.uniform(0.0, 0.01, size=n_an - 1))
    xs = np.concatenate([x[: n_cruise + 1], xd, xd[-1] + creep])
    ys = np.concatenate([y[: n_cruise + 1], yd, np.full(n_an - 1, yd[-1])])
    n = pre + n_an
    xs, ys = xs[:n], ys[:n]
    h = _headings(xs, ys)
    h[pre:] = hd[-1] + side * np.cumsum(rng.uniform(0.0, 0.01, n - pre))
    wheel = _wheels(xs, ys, h, sc, rng)
    fast = rng.uniform(0.25, 0.45, size=n - pre)
    slow = rng.uniform(0.0, 0.15, size=n - pre)
    # steering away from a left-hand row (side=+1) spins the left wheel faster
    wall_side, other = (0, 1) if side > 0 else (1, 0)
    wheel[pre:, wall_side] = fast + rng.normal(0.0, sc.speed_noise, n - pre)
    wheel[pre:, other] = slow + rng.normal(0.0, sc.speed_noise, n - pre)
    return np.stack([xs, ys, h], 1), wheel, pre, []


def _speed_profile(pre: int, n_an: int, v: float, phases: list[tuple[int, float]]) -> np.ndarray:
    """Cruise for ``pre`` steps then ramp linearly through (steps, target) phases."""
    out = [np.full(pre, v)]
    cur = v
    for steps, target in phases:
        ramp = cur + (target - cur) * np.arange(1, steps + 1) / steps
        out.append(ramp)
        cur = target
    prof = np.concatenate(out)
    if len(prof) < pre + n_an:
        prof = np.append(prof, np.full(pre + n_an - len(prof), cur))
    return prof[: pre + n_an]


def _path_from_speed(speed: np.ndarray, sc: ScenarioConfig, rng):
    """Positions after each step of a speed profile; lateral wobble follows distance."""
    n = len(speed)
    x_w, y_w = _wobble(n, 0.0, sc.cruise_speed_max, sc, rng)
    x = np.concatenate([[0.0], np.cumsum(speed * sc.dt)])
    return x, np.interp(x, x_w, y_w)


def _plan_untraversable(sc: ScenarioConfig, rng):
    pre, n_an = sc.pre_steps, sc.anomaly_steps
    v = rng.uniform(sc.cruise_speed_min, sc.cruise_speed_max)
    decel = min(6, n_an)
    speed = _speed_profile(pre, n_an, v, [(decel, 0.0)])
    x, y = _path_from_speed(speed, sc, rng)
    h = _headings(x, y)
    wheel = _wheels(x, y, h, sc, rng)[: pre + n_an]
    x, y, h = x[: pre + n_an], y[: pre + n_an], h[: pre + n_an]
    stop_x = x[-1] + sc.sensor_offset
    front = stop_x + rng.uniform(0.2, 0.5)
    half = sc.lane_width / 2 - sc.stalk_jitter
    n_seg = 14
    lat = np.linspace(-half, half, n_seg) + rng.uniform(-0.02, 0.02, n_seg)
    segs = []
    for yc in lat:
        length = rng.uniform(0.06, 0.16)
        ang = rng.uniform(0.0, np.pi)
        xc = front + rng.uniform(0.02, 0.3)
        dx, dy = 0.5 * length * np.cos(ang), 0.5 * length * np.sin(ang)
        segs.append([xc - dx, yc - dy, xc + dx, yc + dy])
    # the leading face spans the lane so the robot cannot squeeze past
    for y0 in np.arange(-half, half, 0.06):
        segs.append([front, y0, front + rng.uniform(0.0, 0.03), min(y0 + 0.06, half)])
    ob = Obstacle(UNTRAVERSABLE, np.array(segs), near_x=front)
    return np.stack([x, y, h], 1), wheel, pre, [ob]


def _plan_traversable(sc: ScenarioConfig, rng):
    pre, n_an = sc.pre_steps, sc.anomaly_steps
    v = rng.uniform(sc.cruise_speed_min, sc.cruise_speed_max)
    slow = rng.uniform(0.04, 0.12)
    slow_steps = min(5, n_an)
    recover = min(5, max(n_an - slow_steps, 0))
    crawl = max(n_an - slow_steps - recover, 0)
    speed = _speed_profile(pre, n_an, v, [(slow_steps, slow), (crawl, slow), (recover, v)] if recover else
                           [(slow_steps, slow)])
    x, y = _path_from_speed(speed, sc, rng)
    h = _headings(x, y)
    wheel = _wheels(x, y, h, sc, rng)[: pre + n_an]
    x, y, h = x[: pre + n_an], y[: pre + n_an], h[: pre + n_an]
    onset_sensor = x[pre] + sc.sensor_offset
    front = onset_sensor + rng.uniform(0.25, 0.5)
    w = rng.uniform(0.08, 0.2)
    depth = rng.uniform(0.05, 0.12)
    yc = rng.uniform(-0.12, 0.12)
    ob = Obstacle(TRAVERSABLE, box_segments(front, yc - w / 2, front + depth, yc + w / 2),
                  near_x=front, hide_when_passed=True)
    return np.stack([x, y, h], 1), wheel, pre, [ob]


_PLANNERS = {
    NORMAL: _plan_normal,
    COLLISION: _plan_collision,
    UNTRAVERSABLE: _plan_untraversable,
    TRAVERSABLE: _plan_traversable,
}


def plan_episode(kind: int, index: int, sc: ScenarioConfig, seed: int) -> EpisodeConfig:
    ep_seed = derive_seed(seed, "episode", index)
    rng = make_rng(ep_seed)
    poses, wheel, onset, obstacles = _PLANNERS[kind](sc, rng)
    rows = np.concatenate([
        stalk_row(y, sc.row_start, sc.row_start + sc.row_length, sc.stalk_spacing,
                  sc.stalk_size, sc.stalk_jitter, rng)
        for y in (sc.lane_width / 2, -sc.lane_width / 2)
    ])
    return EpisodeConfig(
        run_id=f"ep{index:03d}-{KIND_TAGS[kind]}",
        kind=kind,
        onset=onset,
        poses=poses,
        wheel=wheel,
        rows=rows,
        obstacles=obstacles,
        lane_width=sc.lane_width,
        robot_width=sc.robot_width,
        sensor_offset=sc.sensor_offset,
        range_noise=sc.range_noise,
        dropout=sc.dropout,
        seed=ep_seed,
    )


def plan_episodes(sc: ScenarioConfig, seed: int) -> list[EpisodeConfig]:
    configs = []
    index = 0
    for kind, count in sc.episode_counts.items():
        for _ in range(count):
            configs.append(plan_episode(kind, index, sc, seed))
            index += 1
    return configs


def expected_counts(sc: ScenarioConfig) -> dict[int, int]:
    """Per-class sample totals implied by the schedule alone."""
    counts = {c: 0 for c in range(4)}
    counts[NORMAL] = sc.episodes_normal * sc.normal_steps
    for kind in (COLLISION, UNTRAVERSABLE, TRAVERSABLE):
        n = sc.episode_counts[kind]
        counts[NORMAL] += n * sc.pre_steps
        counts[kind] += n * sc.anomaly_steps
    return counts


def generate_dataset(configs: list[EpisodeConfig], seed: int, scenario_digest: str | None = None) -> Dataset:
    if not configs:
        raise SceneError("no episodes to simulate")
    present = {c.kind for c in configs}
    missing = set(range(4)) - present
    if missing:
        raise SceneError(f"every class needs at least one episode; missing {sorted(missing)}")
    if len({c.run_id for c in configs}) != len(configs):
        raise SceneError("duplicate run ids")
    raw, wheel, labels, runs, steps = [], [], [], [], []
    for cfg in configs:
        rng = make_rng(derive_seed(seed, "scan", cfg.seed))
        for t in range(cfg.n_steps):
            try:
                raw.append(simulate_scan(cfg, cfg.poses[t], rng))
            except SceneError as exc:
                raise SceneError(f"{cfg.run_id} step {t}: {exc}") from None
        wheel.append(cfg.wheel)
        labels.append(cfg.labels)
        runs.extend([cfg.run_id] * cfg.n_steps)
        steps.append(np.arange(cfg.n_steps))
    if scenario_digest is None:
        h = hashlib.sha256("".join(c.digest() for c in configs).encode())
        scenario_digest = h.hexdigest()[:16]
    return Dataset(
        raw=np.array(raw),
        wheel=np.concatenate(wheel),
        y=np.concatenate(labels),
        run_id=np.array(runs, dtype=object),
        t=np.concatenate(steps),
        provenance={"seed": str(seed), "config": scenario_digest},
    )


def generate_from_scenario(sc: ScenarioConfig, seed: int) -> Dataset:
    return generate_dataset(plan_episodes(sc, seed), seed, scenario_digest=sc.digest())
