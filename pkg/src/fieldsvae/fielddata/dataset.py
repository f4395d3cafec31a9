"""Labeled samples, preprocessing, run-level splitting, rebalancing and file IO."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .scene import BEAM_ANGLES_DEG, N_BEAMS, beam_index

CLIP_M = 1.8
# forward cone split into four 15 degree bands, in the sensor angle convention
LOWDIM_BANDS_DEG = ((60.0, 75.0), (75.0, 90.0), (90.0, 105.0), (105.0, 120.0))
HEADER = f"svae-dataset v1 dims={N_BEAMS}"


class DatasetError(ValueError):
    pass


def preprocess_scan(raw: np.ndarray) -> np.ndarray:
    """Clip at 1.8 m and scale to [0, 1]."""
    return np.minimum(np.asarray(raw, dtype=np.float64), CLIP_M) / CLIP_M


def band_indices(lo_deg: float, hi_deg: float) -> np.ndarray:
    """Beams whose angle lies in [lo, hi)."""
    return np.flatnonzero((BEAM_ANGLES_DEG >= lo_deg) & (BEAM_ANGLES_DEG < hi_deg))


_BAND_SLICES = [slice(int(beam_index(lo)), int(beam_index(hi))) for lo, hi in LOWDIM_BANDS_DEG]


def derive_lowdim(raw: np.ndarray, v_left, v_right) -> np.ndarray:
    """(v_left, v_right, mean clipped range in each forward band); works on batches."""
    clipped = np.minimum(np.asarray(raw, dtype=np.float64), CLIP_M)
    means = [clipped[..., s].mean(axis=-1) for s in _BAND_SLICES]
    return np.stack([np.asarray(v_left, dtype=np.float64), np.asarray(v_right, dtype=np.float64), *means], axis=-1)


@dataclass(frozen=True)
class LabeledSample:
    x_h: np.ndarray
    x_l: np.ndarray
    y: int
    run_id: str
    t: int


@dataclass
class Dataset:
    raw: np.ndarray  # (N, 1080) meters
    wheel: np.ndarray  # (N, 2) m/s
    y: np.ndarray  # (N,) labels 0..3
    run_id: np.ndarray  # (N,) str
    t: np.ndarray  # (N,) timestep within run
    provenance: dict = field(default_factory=dict)
    # rebalanced sets contain duplicates and must never be evaluated on
    resampled: bool = False

    def __post_init__(self):
        n = len(self.y)
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(n, -1) if n else np.zeros((0, N_BEAMS))
        self.wheel = np.asarray(self.wheel, dtype=np.float64).reshape(n, 2)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.run_id = np.asarray(self.run_id, dtype=object)
        self.t = np.asarray(self.t, dtype=np.int64)
        if self.raw.shape[1] != N_BEAMS:
            raise DatasetError(f"scans must have {N_BEAMS} beams, got {self.raw.shape[1]}")
        if not (len(self.run_id) == len(self.t) == len(self.wheel) == n):
            raise DatasetError("column lengths differ")
        if n and (self.y.min() < 0 or self.y.max() > 3):
            raise DatasetError("labels must lie in {0, 1, 2, 3}")
        if n and (np.any(~(self.raw > 0)) or np.any(self.raw > 30.0)):
            raise DatasetError("raw ranges must lie in (0, 30] m")
        if not self.resampled and n:
            keys = set(zip(self.run_id.tolist(), self.t.tolist()))
            if len(keys) != n:
                raise DatasetError("(run_id, t) pairs must be unique")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.x_h[i], self.x_l[i], int(self.y[i]), str(self.run_id[i]), int(self.t[i]))

    @cached_property
    def x_h(self) -> np.ndarray:
        return preprocess_scan(self.raw)

    @cached_property
    def x_l(self) -> np.ndarray:
        return derive_lowdim(self.raw, self.wheel[:, 0], self.wheel[:, 1])

    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.y == c)) for c in range(4)}

    def runs(self) -> list[str]:
        return sorted(set(self.run_id.tolist()))

    def subset(self, idx, resampled: bool | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            raw=self.raw[idx], wheel=self.wheel[idx], y=self.y[idx], run_id=self.run_id[idx],
            t=self.t[idx], provenance=dict(self.provenance),
            resampled=self.resampled if resampled is None else resampled,
        )

    def run(self, run_id: str) -> "Dataset":
        idx = np.flatnonzero(self.run_id == run_id)
        return self.subset(idx[np.argsort(self.t[idx], kind="stable")])


def _run_kind(ds: Dataset) -> dict[str, int]:
    """A run's stratum is the highest label it contains (its anomaly class)."""
    kinds: dict[str, int] = {}
    for r, y in zip(ds.run_id.tolist(), ds.y.tolist()):
        kinds[r] = max(kinds.get(r, 0), y)
    return kinds


def split_dataset(ds: Dataset, test_fraction: float, rng: np.random.Generator,
                  tolerance: float = 0.05, attempts: int = 200) -> tuple[Dataset, Dataset]:
    """Split whole runs into train/test, stratified by each run's anomaly class.

    The number of test runs is ``round(test_fraction * n_runs)``; candidates are
    drawn until the test share of samples is within ``tolerance`` of the target.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must lie in (0, 1)")
    kinds = _run_kind(ds)
    runs = sorted(kinds)
    if len(runs) < 2:
        raise DatasetError("need at least 2 distinct runs to split")
    n_test = int(round(test_fraction * len(runs)))
    if not 1 <= n_test < len(runs):
        raise DatasetError(f"{len(runs)} runs cannot be split at test fraction {test_fraction}")
    strata: dict[int, list[str]] = {}
    for r in runs:
        strata.setdefault(kinds[r], []).append(r)
    # largest-remainder allocation; keep one run of every class on each side when possible
    keys = sorted(strata)
    share = {k: test_fraction * len(strata[k]) for k in keys}
    cap = {k: max(len(strata[k]) - 1, 0) for k in keys}
    alloc = {k: min(cap[k], int(np.floor(share[k]))) for k in keys}
    order = sorted(keys, key=lambda k: (-(share[k] - np.floor(share[k])), k))
    while sum(alloc.values()) < n_test:
        open_keys = [k for k in order if alloc[k] < cap[k]] or [k for k in order if alloc[k] < len(strata[k])]
        alloc[min(open_keys, key=lambda k: (alloc[k] - share[k], order.index(k)))] += 1
    if n_test >= len(keys):
        for k in keys:
            if alloc[k] == 0 and cap[k] > 0:
                donor = max(keys, key=lambda j: (alloc[j], -keys.index(j)))
                alloc[donor] -= 1
                alloc[k] = 1

    sizes = {r: int(np.sum(ds.run_id == r)) for r in runs}
    total = len(ds)
    best, best_err = None, None
    for _ in range(attempts):
        test_runs = []
        for k in keys:
            picked = rng.permutation(len(strata[k]))[: alloc[k]]
            test_runs += [strata[k][j] for j in sorted(picked)]
        err = abs(sum(sizes[r] for r in test_runs) / total - test_fraction)
        if best_err is None or err < best_err:
            best, best_err = test_runs, err
        if err <= tolerance:
            break
    if best_err > tolerance:
        raise DatasetError(
            f"no run-level split reaches test fraction {test_fraction} within {tolerance} "
            f"(closest {best_err + test_fraction:.3f})"
        )
    in_test = np.isin(ds.run_id, np.array(best, dtype=object))
    return ds.subset(np.flatnonzero(~in_test)), ds.subset(np.flatnonzero(in_test))


def rebalance(ds: Dataset, rng: np.random.Generator, target: int | None = None) -> Dataset:
    """Under-sample normal, over-sample anomalies to a common per-class count.

    The default target is twice the median anomaly-class count, raised to the
    largest anomaly count if needed so every anomaly sample survives.
    """
    counts = ds.class_counts()
    missing = [c for c, n in counts.items() if n == 0]
    if missing:
        raise DatasetError(f"cannot rebalance: classes {missing} are absent")
    anomaly = [counts[c] for c in (1, 2, 3)]
    if target is None:
        target = int(2 * np.median(anomaly))
    target = max(int(target), max(anomaly))
    picks = []
    for c in range(4):
        idx = np.flatnonzero(ds.y == c)
        if c == 0 and len(idx) >= target:
            chosen = rng.choice(idx, size=target, replace=False)
        else:
            extra = rng.choice(idx, size=target - len(idx), replace=True)
            chosen = np.concatenate([idx, extra])
        picks.append(np.sort(chosen))
    return ds.subset(np.concatenate(picks), resampled=True)


# -- file format ----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    tokens = [HEADER]
    for k in sorted(ds.provenance):
        tokens.append(f"{k}={ds.provenance[k]}")
    if ds.resampled:
        tokens.append("resampled=1")
    lines = [" ".join(tokens)]
    for i in range(len(ds)):
        rid = str(ds.run_id[i])
        fields = [rid, str(int(ds.t[i])), str(int(ds.y[i])), _fmt(ds.wheel[i, 0]), _fmt(ds.wheel[i, 1])]
        fields.extend(map(_fmt, ds.raw[i].tolist()))
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    head = lines[0].split()
    if head[:2] != ["svae-dataset", "v1"]:
        raise DatasetError(f"{path}: bad header {lines[0][:60]!r}")
    meta = dict(tok.split("=", 1) for tok in head[2:] if "=" in tok)
    dims = meta.pop("dims", None)
    if dims != str(N_BEAMS):
        raise DatasetError(f"{path}: header dims={dims}, expected {N_BEAMS}")
    resampled = meta.pop("resampled", "0") == "1"
    n = len(lines) - 1
    raw = np.empty((n, N_BEAMS))
    wheel = np.empty((n, 2))
    y = np.empty(n, dtype=np.int64)
    t = np.empty(n, dtype=np.int64)
    runs = []
    width = 5 + N_BEAMS
    for rec, line in enumerate(lines[1:]):
        parts = line.split(",")
        where = f"{path}: record {rec} (line {rec + 2})"
        if len(parts) != width:
            raise DatasetError(f"{where}: expected {width} fields, got {len(parts)}")
        try:
            runs.append(parts[0])
            t[rec] = int(parts[1])
            y[rec] = int(parts[2])
            wheel[rec] = [float(parts[3]), float(parts[4])]
            raw[rec] = np.array(parts[5:], dtype=np.float64)
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        if not 0 <= y[rec] <= 3:
            raise DatasetError(f"{where}: label {y[rec]} outside 0..3")
    try:
        return Dataset(raw=raw, wheel=wheel, y=y, run_id=np.array(runs, dtype=object), t=t,
                       provenance=meta, resampled=resampled)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None
