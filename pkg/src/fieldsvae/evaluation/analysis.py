"""Per-run sensitivity traces, latent grid maps and reconstruction error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fielddata.scene import scan_to_points
from ..svae import RANGE_CLIP_M


class AnalysisError(ValueError):
    pass


@dataclass
class SensitivityTrace:
    run_id: str
    t: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray  # raw per-step argmax
    emitted: np.ndarray  # after the hold-last rule
    probs: np.ndarray  # (T, 4)
    gap: np.ndarray  # True at the first step after a timestamp discontinuity

    def __len__(self) -> int:
        return len(self.t)


def sensitivity_trace(model, run) -> SensitivityTrace:
    """Predictions along one run, in time order.

    At a timestamp discontinuity the emitted label repeats the previous
    step's emitted label instead of the fresh prediction.
    """
    runs = set(np.asarray(run.run_id).tolist())
    if len(runs) != 1:
        raise AnalysisError(f"expected samples from exactly one run, got {len(runs)}")
    t = np.asarray(run.t, dtype=np.int64)
    if np.any(np.diff(t) <= 0):
        raise AnalysisError("timesteps must be strictly increasing within a run")
    predicted, probs = model.predict(run.x_h, run.x_l)
    predicted = np.asarray(predicted, dtype=np.int64)
    gap = np.zeros(len(t), dtype=bool)
    gap[1:] = np.diff(t) != 1
    emitted = predicted.copy()
    for i in np.flatnonzero(gap):
        emitted[i] = emitted[i - 1]
    return SensitivityTrace(runs.pop(), t, np.asarray(run.y, dtype=np.int64), predicted, emitted,
                            np.asarray(probs), gap)


@dataclass
class GridMap:
    z1: np.ndarray  # (n,)
    z2: np.ndarray  # (n,)
    ranges_m: np.ndarray  # (n, n, beams): cell [i, j] decodes (z1[j], z2[i])
    points: np.ndarray  # (n, n, beams, 2) robot-frame Cartesian

    @property
    def n_cells(self) -> int:
        return self.ranges_m.shape[0] * self.ranges_m.shape[1]


def latent_grid_map(model, z1_range=(-2.0, 2.0), z2_range=(-2.0, 2.0), n: int = 5) -> GridMap:
    """Decode a regular grid of 2-d latent codes into point clouds.

    Decoder outputs are clipped to [0, 1] before denormalization. A 1x1 grid
    sits at the midpoint of the ranges.
    """
    if not hasattr(model, "decode"):
        raise AnalysisError("model has no decoder")
    if model.arch.latent_dim != 2:
        raise AnalysisError(f"grid maps need a 2-d latent space, model has d={model.arch.latent_dim}")
    if n < 1:
        raise AnalysisError("grid size must be >= 1")
    axis = (lambda lo, hi: np.array([(lo + hi) / 2]) if n == 1 else np.linspace(lo, hi, n))
    z1 = axis(*z1_range)
    z2 = axis(*z2_range)
    zz = np.stack(np.meshgrid(z1, z2), axis=-1).reshape(-1, 2)
    x_hat = model.decode(zz)[:, : model.arch.input_dim]
    ranges = np.clip(x_hat, 0.0, 1.0) * RANGE_CLIP_M
    ranges = ranges.reshape(len(z2), len(z1), -1)
    return GridMap(z1, z2, ranges, scan_to_points(ranges))


def reconstruction_error(model, dataset) -> float:
    """Mean absolute scan reconstruction error in meters, decoding the posterior mean."""
    x_h = np.asarray(dataset.x_h, dtype=np.float64)
    if len(x_h) == 0:
        raise AnalysisError("empty dataset")
    x_hat = model.reconstruct(x_h, dataset.x_l)[..., : x_h.shape[-1]]
    return float(np.mean(np.abs(x_h - x_hat)) * RANGE_CLIP_M)
