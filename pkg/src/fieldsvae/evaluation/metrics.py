"""Confusion matrices, per-class accuracy, Cohen's kappa and report files.

Matrices are indexed ``[predicted][actual]``; per-class accuracy is the
diagonal over the column (actual-class) sum.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..fielddata.episodes import CLASS_NAMES
from .analysis import reconstruction_error

N_CLASSES = len(CLASS_NAMES)
SIMPLE_NAMES = ("normal", "row collision", "obstacle")
# real-field figures, printed as context next to synthetic results
REFERENCE_CONTEXT = {"svae_average_pct": "82.00+-1.52", "svae_kappa": "0.84+-0.02", "recon_error_m": 0.388}
CSV_HEADER = ["kind", "seed", "normal", "row collision", "untraversable", "traversable", "average", "kappa"]


class MetricsError(ValueError):
    pass


def confusion(preds, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise MetricsError("preds and labels must be 1-D and equally long")
    for name, v in (("prediction", preds), ("label", labels)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise MetricsError(f"{name} outside 0..{n_classes - 1}")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (preds.astype(np.int64), labels.astype(np.int64)), 1)
    return m


def column_normalized(m: np.ndarray) -> np.ndarray:
    """Percent of each actual class (columns sum to 100)."""
    m = np.asarray(m, dtype=np.float64)
    cols = m.sum(axis=0)
    if np.any(cols == 0):
        raise MetricsError("an actual class has no samples")
    return 100.0 * m / cols


def per_class_accuracy(m: np.ndarray) -> tuple[np.ndarray, float]:
    """(recall of each actual class, unweighted mean), as fractions."""
    m = np.asarray(m)
    cols = m.sum(axis=0)
    empty = np.flatnonzero(cols == 0)
    if empty.size:
        raise MetricsError(f"classes {empty.tolist()} have no test samples")
    acc = np.diag(m) / cols
    return acc, float(acc.mean())


def kappa(m: np.ndarray) -> float:
    """Cohen's kappa, exact on integer counts up to the final division."""
    m = np.asarray(m)
    if np.any(m < 0):
        raise MetricsError("negative counts")
    counts = [[int(v) for v in row] for row in m.tolist()]
    n = sum(map(sum, counts))
    if n == 0:
        raise MetricsError("empty confusion matrix")
    rows = [sum(r) for r in counts]
    cols = [sum(c) for c in zip(*counts)]
    agree = sum(counts[i][i] for i in range(len(counts)))
    chance = sum(r * c for r, c in zip(rows, cols))
    # kappa = (p_o - p_e) / (1 - p_e), scaled through by n^2
    denom = n * n - chance
    if denom == 0:
        raise MetricsError("kappa undefined: chance agreement is 1")
    return (agree * n - chance) / denom


def simplify_obstacles(m: np.ndarray) -> np.ndarray:
    """Merge classes 2 and 3 (both obstacle kinds) into one row and column."""
    m = np.asarray(m)
    if m.shape != (4, 4):
        raise MetricsError("expected a 4x4 matrix")
    g = np.array([0, 1, 2, 2])
    out = np.zeros((3, 3), dtype=m.dtype)
    np.add.at(out, (g[:, None], g[None, :]), m)
    return out


@dataclass
class MetricsReport:
    kind: str
    seed: int | None
    matrix: np.ndarray
    per_class: np.ndarray = field(init=False)  # percent
    average: float = field(init=False)  # percent
    kappa: float = field(init=False)
    simplified: np.ndarray = field(init=False)
    recon_error_m: float | None = None
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        acc, avg = per_class_accuracy(self.matrix)
        self.per_class = 100.0 * acc
        self.average = 100.0 * avg
        self.kappa = kappa(self.matrix)
        self.simplified = simplify_obstacles(self.matrix)

    def row(self) -> list[str]:
        return [self.kind, "" if self.seed is None else str(self.seed),
                *(f"{v:.4f}" for v in self.per_class), f"{self.average:.4f}", f"{self.kappa:.6f}"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerow(self.row())
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"warning = {w}" for w in self.warnings]
        lines += [f"kind = {self.kind}", f"seed = {self.seed}"]
        lines += [f"{k} = {self.meta[k]}" for k in sorted(self.meta)]
        for name, v in zip(CLASS_NAMES, self.per_class):
            lines.append(f"accuracy.{name.replace(' ', '_')} = {v:.4f}")
        lines.append(f"accuracy.average = {self.average:.4f}")
        lines.append(f"kappa = {self.kappa:.6f}")
        lines.append(f"confusion = {_matrix_text(self.matrix)}")
        lines.append(f"confusion_pct = {_matrix_text(column_normalized(self.matrix), '{:.2f}')}")
        lines.append(f"confusion_simplified = {_matrix_text(self.simplified)}")
        lines.append(f"confusion_simplified_pct = {_matrix_text(column_normalized(self.simplified), '{:.2f}')}")
        if self.recon_error_m is not None:
            lines.append(f"recon_error_m = {self.recon_error_m:.6f}")
            lines.append(f"context.recon_error_m = {REFERENCE_CONTEXT['recon_error_m']}")
        lines.append(f"context.svae_average_pct = {REFERENCE_CONTEXT['svae_average_pct']}")
        lines.append(f"context.svae_kappa = {REFERENCE_CONTEXT['svae_kappa']}")
        return "\n".join(lines) + "\n"


def _matrix_text(m: np.ndarray, fmt: str = "{}") -> str:
    """Rows (predicted) separated by ';', entries by ','."""
    return ";".join(",".join(fmt.format(v) for v in row) for row in np.asarray(m).tolist())


def has_decoder(model) -> bool:
    return hasattr(model, "decode")


def evaluate(model, dataset, seed: int | None = None, train_runs=None, meta: dict | None = None) -> MetricsReport:
    """The single evaluation path shared by every model kind.

    ``train_runs`` are the run ids the model was fit on; any overlap with the
    evaluated data puts a warning into the report.
    """
    if getattr(dataset, "resampled", False):
        raise MetricsError("refusing to evaluate on a resampled (rebalanced) dataset")
    if len(dataset) == 0:
        raise MetricsError("empty evaluation set")
    labels, _ = model.predict(dataset.x_h, dataset.x_l)
    warnings = []
    if train_runs is not None:
        overlap = set(dataset.runs()) & set(train_runs)
        if overlap:
            warnings.append(f"EVAL-ON-TRAIN-DATA {len(overlap)} of {len(dataset.runs())} runs were used in training")
    recon = None
    if has_decoder(model):
        recon = reconstruction_error(model, dataset)
    return MetricsReport(getattr(model, "kind", type(model).__name__), seed, confusion(labels, dataset.y),
                         recon_error_m=recon, warnings=warnings, meta=dict(meta or {}))
