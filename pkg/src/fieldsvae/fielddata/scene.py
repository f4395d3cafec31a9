"""2D crop-row scene made of line segments and a 270 degree range sensor.

Beam ``i`` points at ``-45 + 0.25 i`` degrees, measured counter-clockwise from
the robot's right-hand lateral axis, so beam 540 looks straight ahead.
"""
from __future__ import annotations

import numba
import numpy as np

N_BEAMS = 1080
BEAM_START_DEG = -45.0
BEAM_STEP_DEG = 0.25
MAX_RANGE_M = 30.0
MIN_RANGE_M = 0.02

BEAM_ANGLES_DEG = BEAM_START_DEG + BEAM_STEP_DEG * np.arange(N_BEAMS)
BEAM_ANGLES = np.deg2rad(BEAM_ANGLES_DEG)


class SceneError(ValueError):
    pass


def beam_index(angle_deg: float) -> float:
    """Fractional beam index of a sensor-frame angle in degrees."""
    return (angle_deg - BEAM_START_DEG) / BEAM_STEP_DEG


def beam_directions(heading: float) -> tuple[np.ndarray, np.ndarray]:
    # heading 0 = world +x; the sensor's 90 degree beam is aligned with it
    world = heading + BEAM_ANGLES - np.pi / 2
    return np.cos(world), np.sin(world)


def scan_to_points(ranges: np.ndarray) -> np.ndarray:
    """Robot-frame (lateral-right, forward) Cartesian points, one row per beam."""
    r = np.asarray(ranges, dtype=np.float64)
    return np.stack([r * np.cos(BEAM_ANGLES), r * np.sin(BEAM_ANGLES)], axis=-1)


@numba.njit(cache=True)
def _cast(ox, oy, dx, dy, segs, max_range, out):
    for i in range(dx.shape[0]):
        best = max_range
        rx = dx[i]
        ry = dy[i]
        for k in range(segs.shape[0]):
            sx = segs[k, 2] - segs[k, 0]
            sy = segs[k, 3] - segs[k, 1]
            denom = rx * sy - ry * sx
            if denom == 0.0:
                continue
            qx = segs[k, 0] - ox
            qy = segs[k, 1] - oy
            t = (qx * sy - qy * sx) / denom
            u = (qx * ry - qy * rx) / denom
            if t > 0.0 and u >= 0.0 and u <= 1.0 and t < best:
                best = t
        out[i] = best


def cast_rays(origin: tuple[float, float], heading: float, segments: np.ndarray,
              max_range: float = MAX_RANGE_M) -> np.ndarray:
    """Noise-free distance to the nearest segment along each beam (misses read max_range)."""
    segs = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    dx, dy = beam_directions(heading)
    out = np.empty(N_BEAMS)
    _cast(float(origin[0]), float(origin[1]), dx, dy, segs, float(max_range), out)
    return out


def stalk_row(y_center: float, x_start: float, x_end: float, spacing: float, size: float,
              jitter: float, rng: np.random.Generator) -> np.ndarray:
    """One crop row: short segments parallel to the row axis, laterally jittered."""
    n = int(np.floor((x_end - x_start) / spacing + 1e-9)) + 1
    xc = x_start + spacing * np.arange(n)
    yc = y_center + rng.uniform(-jitter, jitter, size=n)
    return np.stack([xc - size / 2, yc, xc + size / 2, yc], axis=1)


def box_segments(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    return np.array([
        [x0, y0, x1, y0],
        [x1, y0, x1, y1],
        [x1, y1, x0, y1],
        [x0, y1, x0, y0],
    ])
