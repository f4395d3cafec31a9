import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fieldsvae.numeric import NumericError
from fieldsvae.svae import (
    LatentCode,
    Svae,
    SvaeArch,
    TrainConfig,
    TrainingDiverged,
    kl_std_normal,
    recon_loss,
    reparameterize,
    run_minibatch_adam,
    tile_lowdim,
    train,
)

from gradcheck import TINY, TINY_UNI, svae_trial


class Toy:
    """Minimal dataset: anything with x_h, x_l and y works for training."""

    def __init__(self, n=64, dim=8, seed=0):
        r = np.random.default_rng(seed)
        self.y = np.repeat(np.arange(4), n // 4)
        centers = r.random((4, dim))
        self.x_h = np.clip(centers[self.y] + 0.05 * r.normal(size=(n, dim)), 0, 1)
        self.x_l = np.eye(4)[self.y] @ r.random((4, 6)) + 0.05 * r.normal(size=(n, 6))


def test_default_architecture():
    m = Svae()
    assert m.enc.dims == (1080, 128)
    assert m.mu_head.dims == (128, 2) and m.lv_head.dims == (128, 2)
    assert m.dec.dims == (2, 128, 1080)
    assert m.cls.dims == (10, 64, 4)


def test_encode_variance_positive_and_deterministic(rng):
    m = Svae().init(5)
    x = rng.random(1080)
    a, b = m.encode(x), m.encode(x)
    assert np.all(a.var > 0)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.logvar, b.logvar)


def test_zero_encoder_gives_prior():
    m = Svae()
    code = m.encode(np.full(1080, 0.5))
    assert np.array_equal(code.mu, np.zeros(2)) and np.array_equal(code.var, np.ones(2))


def test_encode_rejects_wrong_length():
    with pytest.raises(NumericError):
        Svae().encode(np.zeros(1079))


def test_reparameterize_examples():
    code = LatentCode(np.array([0.3, -1.0]), np.log(np.array([2.0, 0.5])))
    assert np.array_equal(reparameterize(code, np.zeros(2)), code.mu)
    z = reparameterize(LatentCode(np.zeros(1), np.log(np.array([4.0]))), np.ones(1))
    assert z[0] == pytest.approx(2.0, abs=1e-12)


def test_reparameterize_monte_carlo_moments():
    code = LatentCode(np.array([0.7, -1.2]), np.log(np.array([0.6, 1.8])))
    eps = np.random.default_rng(0).standard_normal((1_000_000, 2))
    z = reparameterize(code, eps)
    np.testing.assert_allclose(z.mean(axis=0), code.mu, atol=0.01)
    np.testing.assert_allclose(z.var(axis=0), code.var, atol=0.01)


def test_decode_constant_map():
    m = Svae()
    b = np.linspace(-1, 1, 1080)
    m.dec.layers(m.pv)[-1].bias[:] = b
    for z in (np.zeros(2), np.array([3.0, -7.0])):
        assert np.array_equal(m.decode(z), b)
    with pytest.raises(NumericError):
        m.decode(np.zeros(3))


def test_classify_uniform_and_simplex(rng):
    m = Svae().init(0)
    m.cls.layers(m.pv)[-1].weights[:] = 0.0
    code = LatentCode(rng.normal(size=2), rng.normal(size=2))
    np.testing.assert_allclose(m.classify(code, rng.random(6)), np.full(4, 0.25))
    m.init(1)
    p = m.classify(code, rng.random(6))
    assert abs(p.sum() - 1) < 1e-6 and np.all(p >= 0)


def test_classify_uses_variance_not_logvar():
    m = Svae(TINY).init(0)
    code = LatentCode(np.array([0.1, 0.2]), np.log(np.array([3.0, 0.5])))
    x_l = np.arange(6.0)
    np.testing.assert_array_equal(m.classifier_input(code, x_l), np.r_[0.1, 0.2, code.var, x_l])


def test_kl_examples():
    assert kl_std_normal(LatentCode(np.zeros(2), np.zeros(2))) == 0.0
    assert kl_std_normal(LatentCode(np.array([1.0, 0.0]), np.zeros(2))) == pytest.approx(0.5, abs=1e-15)


def test_kl_monte_carlo():
    r = np.random.default_rng(3)
    for _ in range(3):
        mu, var = r.normal(size=2), r.uniform(0.3, 2.5, size=2)
        z = mu + np.sqrt(var) * r.standard_normal((1_000_000, 2))
        log_q = -0.5 * np.sum((z - mu) ** 2 / var + np.log(2 * np.pi * var), axis=1)
        log_p = -0.5 * np.sum(z**2 + np.log(2 * np.pi), axis=1)
        assert abs(np.mean(log_q - log_p) - kl_std_normal(LatentCode(mu, np.log(var)))) < 1e-2


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_kl_nonnegative(mu, lv):
    mu = np.array(mu)
    lv = np.array(lv[: len(mu)])
    kl = kl_std_normal(LatentCode(mu, lv))
    assert kl >= 0
    if np.all(mu == 0) and np.all(lv == 0):
        assert kl == 0


def test_kl_rejects_nonpositive_variance():
    with pytest.raises((ValueError, NumericError)):
        kl_std_normal(LatentCode(np.zeros(1), np.array([-np.inf])))


def test_recon_loss_examples():
    x = np.arange(5.0)
    assert recon_loss(x, x, 1.0) == 0.0
    r = np.zeros(5)
    r[0] = 1.0
    assert recon_loss(x, x - r, 1.0) == pytest.approx(0.5)
    assert recon_loss(x, x - r, 0.5) == pytest.approx(4 * recon_loss(x, x - r, 1.0))
    with pytest.raises(ValueError):
        recon_loss(x, x, 0.0)


def _batch(rng, arch=TINY, b=5):
    return rng.random((b, arch.input_dim)), rng.random((b, 6)), rng.integers(0, 4, b), rng.normal(size=(b, 2))


def test_alpha_zero_is_negative_elbo(rng):
    m = Svae(TINY, alpha_eff=0.0).init(2)
    x_h, x_l, y, eps = _batch(rng)
    loss, parts, _ = m.loss_and_grad(x_h, x_l, y, eps)
    assert loss == pytest.approx(parts["recon"] + parts["kl"], rel=1e-15, abs=0)


def test_loss_decomposition(rng):
    m = Svae(TINY, sigma=0.7, alpha_eff=3.5).init(4)
    x_h, x_l, y, eps = _batch(rng)
    loss, _, _ = m.loss_and_grad(x_h, x_l, y, eps)
    code = m.encode(x_h, x_l)
    z = reparameterize(code, eps)
    recon = recon_loss(x_h, m.decode(z), 0.7)
    kl = kl_std_normal(code)
    ce = -np.log(m.classify(code, x_l)[np.arange(5), y])
    assert abs(loss - np.mean(recon + kl + 3.5 * ce)) < 1e-10


def test_uniform_classifier_ce_is_log4(rng):
    m = Svae(TINY, alpha_eff=1.0).init(0)
    m.cls.layers(m.pv)[-1].weights[:] = 0.0
    x_h, x_l, y, eps = _batch(rng)
    assert m.loss_and_grad(x_h, x_l, y, eps)[1]["ce"] == pytest.approx(math.log(4), abs=1e-12)


def test_invalid_label_rejected(rng):
    m = Svae(TINY).init(0)
    x_h, x_l, _, eps = _batch(rng, b=2)
    with pytest.raises((ValueError, NumericError)):
        m.loss_and_grad(x_h, x_l, np.array([0, 4]), eps)


@pytest.mark.parametrize("arch", [TINY, TINY_UNI], ids=["head", "tiled"])
def test_gradient_finite_differences(arch):
    for seed in range(5):
        assert svae_trial(seed, arch) < 1e-4


def test_multi_sample_gradient(rng):
    from gradcheck import max_rel_error, numeric_grad

    m = Svae(TINY, alpha_eff=0.4).init(1)
    x_h, x_l, y, _ = _batch(rng, b=3)
    eps = rng.normal(size=(4, 3, 2))
    loss, _, g = m.loss_and_grad(x_h, x_l, y, eps)
    num = numeric_grad(lambda: m.loss_and_grad(x_h, x_l, y, eps, need_grad=False)[0], m.pv.data)
    assert max_rel_error(g, num, loss) < 1e-4


def test_classification_gradient_reaches_encoder(rng):
    m = Svae(TINY).init(0)
    x_h, x_l, y, eps = _batch(rng)
    g0 = m.loss_and_grad(x_h, x_l, y, eps, alpha_eff=0.0)[2]
    g1 = m.loss_and_grad(x_h, x_l, y, eps, alpha_eff=5.0)[2]
    enc = m.span("encoder")
    assert not np.allclose(g0[enc], g1[enc])
    assert np.all(g0[m.span("classifier")] == 0.0)


def test_training_endpoint_improves():
    data = Toy()
    cfg = TrainConfig(epochs=200, batch_size=64, lr=0.005, seed=3, alpha_mode="per-sample", alpha=1.0)
    _, hist = train(data, cfg, TINY)
    assert len(hist) == 200
    assert hist[-1]["loss"] < hist[0]["loss"]
    assert set(hist[0]) == {"epoch", "loss", "recon", "kl", "ce"}


def test_training_is_deterministic():
    data = Toy()
    cfg = TrainConfig(epochs=5, batch_size=16, seed=9)
    m1, h1 = train(data, cfg, TINY)
    m2, h2 = train(data, cfg, TINY)
    assert h1 == h2
    assert np.array_equal(m1.pv.data, m2.pv.data)


def test_alpha_modes():
    assert TrainConfig(alpha_mode="literal").alpha_eff(1000) == pytest.approx(100.0)
    assert TrainConfig(alpha_mode="per-sample").alpha_eff(1000) == 0.1
    with pytest.raises(ValueError):
        TrainConfig(alpha_mode="other")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_divergence_keeps_history():
    params = np.zeros(2)
    calls = {"n": 0}

    def step(idx, gstep):
        calls["n"] += 1
        loss = float("nan") if gstep >= 4 else 1.0
        return loss, {"ce": loss}, np.ones(2)

    with pytest.raises(TrainingDiverged) as info:
        run_minibatch_adam(params, 8, step, TrainConfig(epochs=10, batch_size=4), components=("ce",))
    assert len(info.value.history) == 2


def test_predict_argmax_and_no_decoder(rng):
    m = Svae().init(3)
    x_h, x_l = rng.random((7, 1080)), rng.random((7, 6))
    calls = m.decode_calls
    labels, probs = m.predict(x_h, x_l)
    assert m.decode_calls == calls
    assert np.array_equal(labels, probs.argmax(axis=1))
    lab1, p1 = m.predict(x_h[0], x_l[0])
    lab2, p2 = m.predict(x_h[0], x_l[0])
    assert lab1 == lab2 and np.array_equal(p1, p2)
    m.cls.layers(m.pv)[-1].weights[:] = 0.0
    m.cls.layers(m.pv)[-1].bias[:] = np.log([0.1, 0.7, 0.1, 0.1])
    assert m.predict(x_h[0], x_l[0])[0] == 1


def test_tiling_rule():
    x_l = np.array([1.0, 2, 3, 4, 5, 6])
    t = tile_lowdim(x_l, 1080)
    assert t.shape == (6480,)
    for i in range(6):
        assert np.all(t[1080 * i : 1080 * (i + 1)] == x_l[i])
    m = Svae(SvaeArch(input_dim=8, enc_hidden=(4,), lowdim_route="tiled"))
    assert m.encoder_input(np.zeros(8), x_l).shape == (8 + 48,)
