from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldsvae.evaluation.analysis import (
    AnalysisError,
    latent_grid_map,
    reconstruction_error,
    sensitivity_trace,
)
from fieldsvae.evaluation.metrics import (
    MetricsError,
    MetricsReport,
    column_normalized,
    confusion,
    evaluate,
    kappa,
    per_class_accuracy,
    simplify_obstacles,
)
from fieldsvae.evaluation import plots
from fieldsvae.fielddata.scene import scan_to_points
from fieldsvae.numeric import make_rng
from fieldsvae.fielddata.dataset import rebalance
from fieldsvae.baselines import SoftmaxClassifier
from fieldsvae.svae import Svae, SvaeArch


def kappa_fraction(m):
    """Cohen's formula in exact rational arithmetic."""
    m = [[int(v) for v in row] for row in np.asarray(m).tolist()]
    n = sum(map(sum, m))
    po = Fraction(sum(m[i][i] for i in range(len(m))), n)
    pe = sum(Fraction(sum(m[i]) * sum(r[i] for r in m), n * n) for i in range(len(m)))
    return (po - pe) / (1 - pe)


def test_confusion_examples():
    m = confusion([0, 1, 1], [0, 1, 2])
    expected = np.zeros((4, 4), dtype=int)
    expected[0, 0] = expected[1, 1] = expected[1, 2] = 1
    assert np.array_equal(m, expected)
    assert np.array_equal(confusion([0, 1, 2, 3], [0, 1, 2, 3]), np.eye(4, dtype=int))
    with pytest.raises(MetricsError):
        confusion([0, 4], [0, 1])
    np.testing.assert_allclose(column_normalized(confusion([0, 1, 1, 3, 2], [0, 1, 2, 3, 3])).sum(axis=0)[:3],
                               [100, 100, 100])


def test_per_class_accuracy_examples():
    acc, avg = per_class_accuracy(np.diag([3, 4, 5, 6]))
    assert np.all(acc == 1) and avg == 1
    acc, _ = per_class_accuracy(np.array([[20, 5], [10, 15]]))
    assert acc[0] == pytest.approx(20 / 30) and acc[1] == pytest.approx(15 / 20)
    with pytest.raises(MetricsError):
        per_class_accuracy(np.diag([1, 0, 1, 1]))


def test_column_normalized_table_reproduces_diagonal():
    table = np.array([[90.0, 5, 2, 4], [4, 85, 3, 6], [3, 6, 80, 10], [3, 4, 15, 80]])
    acc, avg = per_class_accuracy(table)
    np.testing.assert_allclose(100 * acc, np.diag(table))
    assert 100 * avg == pytest.approx(np.mean(np.diag(table)))


def test_kappa_examples():
    assert kappa(np.array([[10, 0], [0, 10]])) == 1.0
    assert kappa(np.array([[5, 5], [5, 5]])) == 0.0
    assert kappa(np.array([[20, 5], [10, 15]])) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(MetricsError):
        kappa(np.array([[7, 0], [0, 0]]))


@given(st.lists(st.integers(0, 40), min_size=16, max_size=16))
@settings(max_examples=200)
def test_kappa_exact_and_bounded(cells):
    m = np.array(cells).reshape(4, 4)
    try:
        k = kappa(m)
    except MetricsError:
        return
    assert k == float(kappa_fraction(m))
    assert -1.0 <= k <= 1.0
    nonempty = np.sum((m.sum(axis=0) > 0) | (m.sum(axis=1) > 0))
    if nonempty >= 2:
        assert (k == 1.0) == bool(np.all(m[~np.eye(4, dtype=bool)] == 0))


@given(st.lists(st.integers(0, 30), min_size=16, max_size=16))
def test_simplify_obstacles(cells):
    m = np.array(cells).reshape(4, 4)
    s = simplify_obstacles(m)
    assert s.sum() == m.sum()
    assert np.array_equal(simplify_obstacles(m.T), s.T)
    if m[:, 2].sum() > 0 and m[:, 3].sum() > 0:
        merged = s[2, 2] / s[:, 2].sum()
        assert merged >= min(m[2, 2] / m[:, 2].sum(), m[3, 3] / m[:, 3].sum()) - 1e-12
    assert np.array_equal(simplify_obstacles(np.diag([1, 2, 3, 4])), np.diag([1, 2, 7]))


class Scripted:
    """Predicts the labels it was given, one per row."""

    kind = "scripted"

    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def predict(self, x_h, x_l):
        lab = self.labels[: len(x_h)]
        return lab, np.eye(4)[lab] * 0.7 + 0.075


def _run(small_dataset, name=None):
    name = name or small_dataset.runs()[0]
    return small_dataset.run(name)


def test_trace_without_gaps_equals_predict(small_dataset):
    run = _run(small_dataset)
    m = Svae().init(0)
    tr = sensitivity_trace(m, run)
    assert np.array_equal(tr.emitted, m.predict(run.x_h, run.x_l)[0])
    np.testing.assert_allclose(tr.probs.sum(axis=1), 1.0)


def test_trace_hold_last_at_gap(small_dataset):
    run = _run(small_dataset)
    keep = np.flatnonzero(run.t != 10)  # drop t = 10: a gap between t = 9 and t = 11
    gapped = run.subset(keep)
    labels = np.arange(len(gapped)) % 4
    tr = sensitivity_trace(Scripted(labels), gapped)
    i = int(np.flatnonzero(gapped.t == 11)[0])
    assert tr.gap[i] and tr.gap.sum() == 1
    assert tr.emitted[i] == tr.emitted[i - 1] != labels[i]
    others = np.ones(len(gapped), bool)
    others[i] = False
    assert np.array_equal(tr.emitted[others], labels[others])


def test_trace_rejects_unordered(small_dataset):
    run = _run(small_dataset)
    with pytest.raises(AnalysisError):
        sensitivity_trace(Scripted(np.zeros(len(run), int)), run.subset(np.arange(len(run))[::-1]))


def test_grid_map():
    m = Svae().init(0)
    g = latent_grid_map(m, n=5)
    assert g.n_cells == 25 and g.ranges_m.shape == (5, 5, 1080)
    assert np.all(g.ranges_m >= 0) and np.all(g.ranges_m <= 1.8)
    one = latent_grid_map(m, n=1)
    expected = np.clip(m.decode(np.zeros(2)), 0, 1) * 1.8
    assert np.array_equal(one.ranges_m[0, 0], expected)
    np.testing.assert_allclose(one.points[0, 0], scan_to_points(expected))
    with pytest.raises(AnalysisError):
        latent_grid_map(Svae(SvaeArch(latent_dim=3)))
    with pytest.raises(AnalysisError, match="no decoder"):
        latent_grid_map(SoftmaxClassifier(4, ()))


class Shifted:
    def __init__(self, shift):
        self.shift = shift

    def reconstruct(self, x_h, x_l=None):
        return np.asarray(x_h) + self.shift


def test_reconstruction_error_examples(small_dataset):
    assert reconstruction_error(Shifted(0.0), small_dataset) == 0.0
    assert reconstruction_error(Shifted(1 / 1.8), small_dataset) == pytest.approx(1.0, abs=1e-12)


def test_evaluate_report(small_dataset):
    model = Svae().init(0)
    rep = evaluate(model, small_dataset, seed=3)
    assert rep.matrix.sum() == len(small_dataset)
    assert np.array_equal(rep.matrix.sum(axis=0), [small_dataset.class_counts()[c] for c in range(4)])
    assert rep.average == pytest.approx(np.mean(rep.per_class))
    assert rep.recon_error_m is not None
    text = rep.to_text()
    assert "confusion_simplified =" in text and "context.recon_error_m = 0.388" in text
    assert text == evaluate(model, small_dataset, seed=3).to_text()
    assert rep.to_csv().splitlines()[0] == "kind,seed,normal,row collision,untraversable,traversable,average,kappa"
    warned = evaluate(model, small_dataset, train_runs=small_dataset.runs()[:2])
    assert warned.warnings and "EVAL-ON-TRAIN-DATA" in warned.to_text()
    with pytest.raises(MetricsError, match="resampled"):
        evaluate(model, rebalance(small_dataset, make_rng(0)))


def test_plots_deterministic(tmp_path, small_dataset):
    m = Svae().init(0)
    tr = sensitivity_trace(m, _run(small_dataset))
    for name in ("a", "b"):
        plots.timeline([("truth", tr.truth), ("svae", tr.emitted)], tmp_path / f"{name}.svg", probs=tr.probs, t=tr.t)
        plots.grid_map(latent_grid_map(m, n=3), tmp_path / f"g{name}.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "ga.svg").read_bytes() == (tmp_path / "gb.svg").read_bytes()


def test_timeline_legend_colours(tmp_path):
    p = plots.timeline([("truth", np.array([0, 0, 1, 2, 3]))], tmp_path / "t.svg")
    text = p.read_text()
    for c in range(4):
        assert text.count(f'fill="{plots.LEGEND[c]}"') >= 2  # band plus legend swatch
    assert plots.LEGEND_NAMES == {0: "blue", 1: "yellow", 2: "green", 3: "red"}
    with pytest.raises(plots.PlotError, match="empty"):
        plots.timeline([("truth", np.array([], dtype=int))], tmp_path / "e.svg")
    with pytest.raises(plots.PlotError):
        plots.timeline([("truth", np.array([0]))], tmp_path / "missing" / "e.svg")
