import numpy as np
import pytest
from hypothesis import given, strategies as st

from fieldsvae.numeric import (
    Activation,
    AdamState,
    DenseLayer,
    NumericError,
    ParameterVector,
    Stack,
    adam_step,
    dense_backward,
    dense_forward,
    derive_seed,
    glorot_bound,
    log_softmax,
    make_rng,
    sample_standard_normal,
    softmax,
)


def naive_dense(w, b, x, relu):
    out = np.zeros(w.shape[0])
    for i in range(w.shape[0]):
        acc = b[i]
        for j in range(w.shape[1]):
            acc += w[i, j] * x[j]
        out[i] = max(acc, 0.0) if relu else acc
    return out


@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**31))
def test_dense_forward_matches_loops(n_in, n_out, seed):
    r = np.random.default_rng(seed)
    w, b, x = r.normal(size=(n_out, n_in)), r.normal(size=n_out), r.normal(size=n_in)
    for act in Activation:
        _, out = dense_forward(DenseLayer(w, b, act), x)
        np.testing.assert_allclose(out, naive_dense(w, b, x, act is Activation.RELU), rtol=1e-12, atol=1e-12)


def test_dense_batch_equals_rows(rng):
    layer = DenseLayer(rng.normal(size=(4, 3)), rng.normal(size=4))
    x = rng.normal(size=(5, 3))
    _, out = dense_forward(layer, x)
    for i in range(5):
        np.testing.assert_allclose(out[i], dense_forward(layer, x[i])[1])


def test_dense_rejects_wrong_width(rng):
    layer = DenseLayer(rng.normal(size=(4, 3)), np.zeros(4))
    with pytest.raises(NumericError):
        dense_forward(layer, np.zeros(5))
    with pytest.raises(NumericError):
        DenseLayer(np.zeros((4, 3)), np.zeros(3))


def test_dense_backward_finite_differences(rng):
    w, b = rng.normal(size=(5, 4)), rng.normal(size=5)
    x = rng.normal(size=(3, 4))
    g_out = rng.normal(size=(3, 5))
    for act in Activation:
        layer = DenseLayer(w.copy(), b.copy(), act)
        pre, _ = dense_forward(layer, x)
        gw, gb, gx = dense_backward(layer, pre, x, g_out)

        def f(ww, bb, xx):
            return float(np.sum(dense_forward(DenseLayer(ww, bb, act), xx)[1] * g_out))

        h = 1e-6
        for (arr, g) in ((w, gw), (b, gb), (x, gx)):
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = f(w, b, x)
                arr[idx] = old - h
                fm = f(w, b, x)
                arr[idx] = old
                num[idx] = (fp - fm) / (2 * h)
            np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_relu_derivative_zero_at_kink():
    layer = DenseLayer(np.zeros((1, 1)), np.zeros(1))
    pre, _ = dense_forward(layer, np.array([1.0]))
    gw, gb, gx = dense_backward(layer, pre, np.array([1.0]), np.array([1.0]))
    assert gw[0, 0] == 0.0 and gb[0] == 0.0 and gx[0] == 0.0


def test_adam_first_step_moves_by_lr():
    # after bias correction the first step is lr * g / (|g| + eps)
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, -4.0, 1e-3])
    st_ = AdamState(lr=0.01)
    adam_step(p, g, st_)
    expected = np.array([1.0, -2.0, 3.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert st_.t == 1


def test_adam_matches_textbook_recursion(rng):
    p = rng.normal(size=6)
    ref = p.copy()
    m = np.zeros(6)
    v = np.zeros(6)
    st_ = AdamState(lr=0.003)
    for t in range(1, 30):
        g = rng.normal(size=6)
        adam_step(p, g, st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.003 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12, atol=1e-14)


def test_adam_rejects_non_finite_and_leaves_state():
    p = np.zeros(2)
    st_ = AdamState()
    adam_step(p, np.ones(2), st_)
    before = (p.copy(), st_.m.copy(), st_.v.copy(), st_.t)
    with pytest.raises(NumericError):
        adam_step(p, np.array([np.nan, 1.0]), st_)
    assert np.array_equal(p, before[0]) and np.array_equal(st_.m, before[1]) and st_.t == before[3]


def test_glorot_init_within_bounds():
    s = Stack("net", (30, 20, 4))
    pv = ParameterVector(s.shapes())
    s.init(pv, make_rng(0))
    for i, (fi, fo) in enumerate([(30, 20), (20, 4)]):
        w = pv.view(f"net.{i}.w")
        assert w.shape == (fo, fi)
        assert np.all(np.abs(w) <= glorot_bound(fi, fo))
        assert np.all(pv.view(f"net.{i}.b") == 0.0)


def test_stack_backward_finite_differences(rng):
    s = Stack("net", (5, 7, 3))
    pv = ParameterVector(s.shapes())
    s.init(pv, make_rng(3))
    pv.data += 0.1 * rng.normal(size=pv.size)
    x = rng.normal(size=(4, 5))
    g_out = rng.normal(size=(4, 3))
    out, cache = s.forward(pv, x)
    grad = pv.zeros_like()
    s.backward(pv, cache, g_out, grad)
    h = 1e-6
    for i in range(pv.size):
        old = pv.data[i]
        pv.data[i] = old + h
        fp = np.sum(s.forward(pv, x)[0] * g_out)
        pv.data[i] = old - h
        fm = np.sum(s.forward(pv, x)[0] * g_out)
        pv.data[i] = old
        assert abs((fp - fm) / (2 * h) - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))


def test_parameter_vector_views_share_memory():
    pv = ParameterVector([("a", (2, 3)), ("b", (3,))])
    pv.view("a")[1, 2] = 5.0
    assert pv.data[5] == 5.0
    assert pv.span(["a", "b"]) == slice(0, 9)
    with pytest.raises(NumericError):
        ParameterVector([("a", (1,)), ("a", (2,))])


def test_rng_determinism_and_seed_derivation():
    a = make_rng(42).standard_normal(5)
    b = make_rng(42).standard_normal(5)
    assert np.array_equal(a, b)
    assert derive_seed(1, "init") == derive_seed(1, "init")
    seeds = {derive_seed(1, "init"), derive_seed(1, "eps"), derive_seed(2, "init"), derive_seed(1, "episode", 3)}
    assert len(seeds) == 4
    with pytest.raises(NumericError):
        sample_standard_normal(make_rng(0), 0)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
def test_softmax_simplex_and_shift(logits, c):
    z = np.array(logits)
    p = softmax(z)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(z)), p, atol=1e-12)
