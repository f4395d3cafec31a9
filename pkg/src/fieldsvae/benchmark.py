"""Synthetic benchmark protocol: data preparation, per-kind training defaults,
seed sweeps and the mean +- std summary table.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from .evaluation.metrics import CSV_HEADER, MetricsReport, evaluate
from .fielddata.dataset import Dataset, rebalance, split_dataset
from .fielddata.episodes import generate_from_scenario
from .fielddata.scenario import ScenarioConfig
from .numeric import derive_seed, make_rng
from .svae import TrainConfig, TrainingDiverged
from .svae import train as train_svae

log = logging.getLogger(__name__)

DATA_SEED = 7
TEST_FRACTION = 0.2
SEEDS = tuple(range(10))
KIND_ORDER = ("mlp", "pca-mlr", "vae-mlp", "svae-uni", "svae")
DISPLAY = {"mlp": "MLP", "pca-mlr": "PCA+MLR", "vae-mlp": "VAE+MLP", "svae-uni": "SVAE (uni-modal)", "svae": "SVAE"}
TABLE_COLUMNS = ("normal", "row collision", "untraversable", "traversable", "average", "Kappa")

# Training defaults per kind, chosen by the calibration run in calibration/.
# lr grid {1e-4, 5e-4, 1e-3}; the SVAE kinds also record their alpha mode.
DEFAULTS = {
    "svae": TrainConfig(epochs=100, batch_size=64, lr=5e-4, alpha_mode="per-sample"),
    "vae-mlp": TrainConfig(epochs=100, batch_size=64, lr=5e-4),
    "mlp": TrainConfig(epochs=100, batch_size=64, lr=5e-4),
    "pca-mlr": TrainConfig(epochs=1, batch_size=64, lr=1e-3),
    "svae-uni": TrainConfig(epochs=5, batch_size=256, lr=1e-4, alpha_mode="literal"),
}


def _train_vae_mlp(ds, cfg):
    model, hist = baselines.train_vae_then_mlp(ds, cfg)
    return model, hist["stage1"] + hist["stage2"]


TRAINERS = {
    "svae": lambda ds, cfg: train_svae(ds, cfg),
    "mlp": baselines.train_mlp,
    "pca-mlr": baselines.train_pca_mlr,
    "vae-mlp": _train_vae_mlp,
    "svae-uni": baselines.train_unimodal_svae,
}


def default_config(kind: str, seed: int = 0, **overrides) -> TrainConfig:
    if kind not in DEFAULTS:
        raise KeyError(kind)
    return replace(DEFAULTS[kind], seed=seed, **overrides)


def train_model(kind: str, train_set: Dataset, config: TrainConfig):
    if kind not in TRAINERS:
        raise KeyError(kind)
    return TRAINERS[kind](train_set, config)


def run_meta(kind: str, config: TrainConfig, n_train: int) -> dict:
    meta = {"epochs": config.epochs, "batch_size": config.batch_size, "lr": config.lr}
    if kind in ("svae", "svae-uni"):
        meta.update(alpha_mode=config.alpha_mode, alpha=config.alpha, alpha_eff=config.alpha_eff(n_train),
                    sigma=config.sigma)
    return meta


@dataclass
class Splits:
    full: Dataset
    train: Dataset  # disjoint runs from test, not rebalanced
    test: Dataset
    train_balanced: Dataset


def split_and_balance(full: Dataset, root_seed: int, test_fraction: float = TEST_FRACTION) -> Splits:
    train, test = split_dataset(full, test_fraction, make_rng(derive_seed(root_seed, "split")))
    bal = rebalance(train, make_rng(derive_seed(root_seed, "rebalance")))
    return Splits(full, train, test, bal)


def prepare(scenario: ScenarioConfig | None = None, root_seed: int = DATA_SEED,
            test_fraction: float = TEST_FRACTION) -> Splits:
    full = generate_from_scenario(scenario or ScenarioConfig(), root_seed)
    return split_and_balance(full, root_seed, test_fraction)


def balanced_subset(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """Undersample every class to the smallest class count, without replacement."""
    counts = ds.class_counts()
    m = min(counts.values())
    if m == 0:
        raise ValueError("a class is absent")
    idx = np.concatenate([np.sort(rng.choice(np.flatnonzero(ds.y == c), m, replace=False)) for c in range(4)])
    return ds.subset(idx)


@dataclass
class SweepResult:
    reports: list[MetricsReport] = field(default_factory=list)
    failures: list[tuple[str, int, str]] = field(default_factory=list)
    seconds: dict = field(default_factory=dict)  # (kind, seed) -> wall time

    def by_kind(self, kind: str) -> list[MetricsReport]:
        return [r for r in self.reports if r.kind == kind]


def sweep(splits: Splits, kinds=KIND_ORDER, seeds=SEEDS, configs: dict | None = None,
          on_result=None) -> SweepResult:
    """Train and evaluate every (kind, seed); a failing cell is recorded and skipped."""
    out = SweepResult()
    for seed in seeds:
        for kind in kinds:
            cfg = replace((configs or {}).get(kind, DEFAULTS[kind]), seed=seed)
            t0 = time.perf_counter()
            try:
                model, _ = train_model(kind, splits.train_balanced, cfg)
                rep = evaluate(model, splits.test, seed=seed, train_runs=splits.train.runs(),
                               meta=run_meta(kind, cfg, len(splits.train_balanced)))
            except (TrainingDiverged, ValueError, FloatingPointError) as exc:
                out.failures.append((kind, seed, f"{type(exc).__name__}: {exc}"))
                log.warning("%s seed %d failed: %s", kind, seed, exc)
                continue
            out.seconds[(kind, seed)] = time.perf_counter() - t0
            out.reports.append(rep)
            log.info("%s seed %d avg %.2f kappa %.4f", kind, seed, rep.average, rep.kappa)
            if on_result is not None:
                on_result(rep)
    return out


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def summary_rows(result: SweepResult, kinds=KIND_ORDER) -> dict[str, list[tuple[float, float]]]:
    rows = {}
    for kind in kinds:
        reps = result.by_kind(kind)
        if not reps:
            continue
        cols = [[r.per_class[c] for r in reps] for c in range(4)]
        cols += [[r.average for r in reps], [r.kappa for r in reps]]
        rows[kind] = [mean_std(c) for c in cols]
    return rows


def summary_table(result: SweepResult, kinds=KIND_ORDER) -> str:
    """Comma-separated table: one row per model, cells 'mean+-std'."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *TABLE_COLUMNS, "seeds"])
    for kind, cells in summary_rows(result, kinds).items():
        fmt = [f"{m:.2f}+-{s:.2f}" for m, s in cells[:5]] + [f"{cells[5][0]:.4f}+-{cells[5][1]:.4f}"]
        w.writerow([DISPLAY[kind], *fmt, len(result.by_kind(kind))])
    for kind, seed, msg in result.failures:
        w.writerow([f"# failed {DISPLAY.get(kind, kind)} seed {seed}: {msg}"])
    return buf.getvalue()


def raw_table(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER + ["seconds"])
    for r in result.reports:
        w.writerow(r.row() + [f"{result.seconds.get((r.kind, r.seed), float('nan')):.1f}"])
    return buf.getvalue()
