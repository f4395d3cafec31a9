"""Supervised VAE: Gaussian encoder, Gaussian decoder and a categorical
classifier head trained jointly on reconstruction + KL + weighted CE.

The classifier reads the encoder's mean and variance (not a sampled z)
together with the low-dimensional inputs, so the cross-entropy gradient
reaches the encoder through both heads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numeric import (
    Activation,
    AdamState,
    NumericError,
    ParameterVector,
    Stack,
    adam_step,
    derive_seed,
    log_softmax,
    make_rng,
    softmax,
)

log = logging.getLogger(__name__)

N_CLASSES = 4
RANGE_CLIP_M = 1.8


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class SvaeArch:
    input_dim: int = 1080
    enc_hidden: tuple[int, ...] = (128,)
    latent_dim: int = 2
    cls_hidden: tuple[int, ...] = (64,)
    lowdim_dim: int = 6
    n_classes: int = N_CLASSES
    # "head": x_l joins (mu, var) at the classifier; "tiled": x_l is repeated
    # input_dim times and appended to the encoder input (uni-modal ablation).
    lowdim_route: str = "head"

    def __post_init__(self):
        if self.latent_dim < 1 or self.input_dim < 1:
            raise ValueError("latent_dim and input_dim must be positive")
        if self.lowdim_route not in ("head", "tiled"):
            raise ValueError(f"unknown lowdim_route {self.lowdim_route!r}")

    @property
    def encoder_input_dim(self) -> int:
        if self.lowdim_route == "tiled":
            return self.input_dim * (1 + self.lowdim_dim)
        return self.input_dim

    @property
    def classifier_input_dim(self) -> int:
        extra = self.lowdim_dim if self.lowdim_route == "head" else 0
        return 2 * self.latent_dim + extra


UNIMODAL_ARCH = SvaeArch(enc_hidden=(2048, 1024), latent_dim=128, lowdim_route="tiled")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.0005
    seed: int = 0
    alpha_mode: str = "literal"  # "literal": alpha * N; "per-sample": alpha
    alpha: float = 0.1
    sigma: float = 1.0
    mc_samples: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.alpha_mode not in ("literal", "per-sample"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def alpha_eff(self, n_train: int) -> float:
        if self.alpha_mode == "literal":
            return self.alpha * n_train
        return self.alpha


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar)

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise NumericError("mu and log-variance shapes differ")


def reparameterize(code: LatentCode, eps: np.ndarray) -> np.ndarray:
    """z = mu + sqrt(var) * eps; leading sample axes of eps broadcast."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[eps.ndim - code.mu.ndim :] != code.mu.shape:
        raise NumericError(f"eps shape {eps.shape} incompatible with latent shape {code.mu.shape}")
    return code.mu + np.exp(0.5 * code.logvar) * eps


def kl_std_normal(code: LatentCode) -> np.ndarray:
    """KL(N(mu, diag var) || N(0, I)); one value per row."""
    var = code.var
    if np.any(~np.isfinite(var)) or np.any(var <= 0.0):
        raise NumericError("variance must be positive and finite")
    # var - 1 - log var via expm1 stays exact (and >= 0) near var = 1
    gap = np.maximum(np.expm1(code.logvar) - code.logvar, 0.0)
    return 0.5 * np.sum(code.mu**2 + gap, axis=-1)


def kl_from_variance(mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0.0):
        raise NumericError("variance must be positive")
    return kl_std_normal(LatentCode(np.asarray(mu, dtype=np.float64), np.log(var)))


def recon_loss(x: np.ndarray, x_hat: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian negative log-likelihood without the log(2 pi sigma^2) constant."""
    if sigma <= 0:
        raise NumericError("sigma must be > 0")
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise NumericError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return np.sum((x - x_hat) ** 2, axis=-1) / (2.0 * sigma**2)


def _check_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= n_classes):
        raise NumericError(f"labels must be integers in [0, {n_classes - 1}]")
    return y.astype(np.int64)


class Svae:
    """Parameters and forward/backward passes of a (uni- or multi-modal) SVAE."""

    kind = "svae"

    def __init__(self, arch: SvaeArch = SvaeArch(), sigma: float = 1.0, alpha_eff: float = 0.0):
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        if alpha_eff < 0:
            raise ValueError("alpha_eff must be >= 0")
        self.arch = arch
        self.sigma = float(sigma)
        self.alpha_eff = float(alpha_eff)
        h = arch.enc_hidden[-1]
        self.enc = Stack("enc", (arch.encoder_input_dim, *arch.enc_hidden), Activation.RELU)
        self.mu_head = Stack("mu", (h, arch.latent_dim))
        self.lv_head = Stack("lv", (h, arch.latent_dim))
        self.dec = Stack("dec", (arch.latent_dim, *reversed(arch.enc_hidden), arch.encoder_input_dim))
        self.cls = Stack("cls", (arch.classifier_input_dim, *arch.cls_hidden, arch.n_classes))
        self.stacks = [self.enc, self.mu_head, self.lv_head, self.dec, self.cls]
        self.pv = ParameterVector([s for st in self.stacks for s in st.shapes()])
        self.decode_calls = 0

    # -- parameter groups -------------------------------------------------
    def span(self, group: str) -> slice:
        stacks = {
            "encoder": [self.enc, self.mu_head, self.lv_head],
            "decoder": [self.dec],
            "classifier": [self.cls],
        }[group]
        return self.pv.span([n for st in stacks for n in st.param_names()])

    def init(self, seed: int) -> "Svae":
        rng = make_rng(seed)
        for st in self.stacks:
            st.init(self.pv, rng)
        return self

    # -- forward pieces ----------------------------------------------------
    def encoder_input(self, x_h: np.ndarray, x_l: np.ndarray | None) -> np.ndarray:
        x_h = np.asarray(x_h, dtype=np.float64)
        if x_h.shape[-1] != self.arch.input_dim:
            raise NumericError(f"x_h has length {x_h.shape[-1]}, expected {self.arch.input_dim}")
        if self.arch.lowdim_route == "tiled":
            x_l = self._check_lowdim(x_l, x_h.shape[:-1])
            return np.concatenate([x_h, tile_lowdim(x_l, self.arch.input_dim)], axis=-1)
        return x_h

    def _check_lowdim(self, x_l, batch_shape: tuple[int, ...]) -> np.ndarray:
        if self.arch.lowdim_dim == 0:
            return np.zeros(batch_shape + (0,))
        if x_l is None:
            raise NumericError("model needs low-dimensional inputs x_l")
        x_l = np.asarray(x_l, dtype=np.float64)
        if x_l.shape != batch_shape + (self.arch.lowdim_dim,):
            raise NumericError(f"x_l shape {x_l.shape} incompatible with batch shape {batch_shape}")
        return x_l

    def _encode(self, inp: np.ndarray):
        h, enc_cache = self.enc.forward(self.pv, inp)
        mu, mu_cache = self.mu_head.forward(self.pv, h)
        lv, lv_cache = self.lv_head.forward(self.pv, h)
        return LatentCode(mu, lv), (enc_cache, mu_cache, lv_cache)

    def encode(self, x_h: np.ndarray, x_l: np.ndarray | None = None) -> LatentCode:
        if not np.all(np.isfinite(x_h)):
            raise NumericError("x_h contains non-finite values")
        return self._encode(self.encoder_input(x_h, x_l))[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.arch.latent_dim:
            raise NumericError(f"z has length {z.shape[-1]}, expected {self.arch.latent_dim}")
        self.decode_calls += 1
        return self.dec.forward(self.pv, z)[0]

    def classifier_input(self, code: LatentCode, x_l: np.ndarray | None) -> np.ndarray:
        parts = [code.mu, code.var]
        if self.arch.lowdim_route == "head" and self.arch.lowdim_dim:
            parts.append(self._check_lowdim(x_l, code.mu.shape[:-1]))
        return np.concatenate(parts, axis=-1)

    def classify(self, code: LatentCode, x_l: np.ndarray | None = None) -> np.ndarray:
        cin = self.classifier_input(code, x_l)
        if not np.all(np.isfinite(cin)):
            raise NumericError("classifier input contains non-finite values")
        return softmax(self.cls.forward(self.pv, cin)[0])

    def predict_proba(self, x_h: np.ndarray, x_l: np.ndarray | None) -> np.ndarray:
        code = self.encode(x_h, x_l)
        return self.classify(code, x_l)

    def predict(self, x_h: np.ndarray, x_l: np.ndarray | None):
        probs = self.predict_proba(x_h, x_l)
        labels = np.argmax(probs, axis=-1)
        if probs.ndim == 1:
            return int(labels), probs
        return labels, probs

    def reconstruct(self, x_h: np.ndarray, x_l: np.ndarray | None = None) -> np.ndarray:
        """Decode from the posterior mean (eps = 0)."""
        return self.decode(self.encode(x_h, x_l).mu)

    # -- loss ----------------------------------------------------------------
    def loss_and_grad(self, x_h, x_l, y, eps, alpha_eff: float | None = None, need_grad: bool = True):
        """Batch-mean loss, its components and the flat gradient.

        ``eps`` has shape (B, d) or (S, B, d) for S Monte Carlo samples of the
        reconstruction expectation.
        """
        alpha = self.alpha_eff if alpha_eff is None else float(alpha_eff)
        x_h = np.atleast_2d(np.asarray(x_h, dtype=np.float64))
        batch = x_h.shape[0]
        if batch == 0:
            raise NumericError("empty batch")
        x_l = None if x_l is None else np.atleast_2d(x_l)
        y = _check_labels(np.atleast_1d(y), self.arch.n_classes)
        if y.shape != (batch,):
            raise NumericError("label count does not match batch size")
        eps = np.asarray(eps, dtype=np.float64)
        if eps.ndim == 2:
            eps = eps[None]
        if eps.shape[1:] != (batch, self.arch.latent_dim):
            raise NumericError(f"eps shape {eps.shape} incompatible with batch {batch}")
        n_mc = eps.shape[0]
        pv = self.pv
        grad = pv.zeros_like() if need_grad else None

        inp = self.encoder_input(x_h, x_l)
        code, (enc_cache, mu_cache, lv_cache) = self._encode(inp)
        mu, lv = code.mu, code.logvar
        std = np.exp(0.5 * lv)
        var = std * std

        recon = np.zeros(batch)
        dmu = np.zeros_like(mu)
        dlv = np.zeros_like(lv)
        inv_s2 = 1.0 / self.sigma**2
        for s in range(n_mc):
            z = mu + std * eps[s]
            x_hat, dec_cache = self.dec.forward(pv, z)
            resid = x_hat - inp
            recon += 0.5 * inv_s2 * np.sum(resid * resid, axis=1) / n_mc
            if need_grad:
                dz = self.dec.backward(pv, dec_cache, resid * (inv_s2 / (batch * n_mc)), grad)
                dmu += dz
                dlv += dz * eps[s] * 0.5 * std

        kl = 0.5 * np.sum(mu * mu + var - 1.0 - lv, axis=1)
        cin = self.classifier_input(code, x_l)
        logits, cls_cache = self.cls.forward(pv, cin)
        logp = log_softmax(logits)
        ce = -logp[np.arange(batch), y]

        total = recon + kl + alpha * ce
        loss = float(np.mean(total))
        parts = {
            "recon": float(np.mean(recon)),
            "kl": float(np.mean(kl)),
            "ce": float(np.mean(ce)),
        }
        if not need_grad:
            return loss, parts, None

        dmu += mu / batch
        dlv += 0.5 * (var - 1.0) / batch
        if alpha != 0.0:
            dlogits = np.exp(logp)
            dlogits[np.arange(batch), y] -= 1.0
            dlogits *= alpha / batch
            dcin = self.cls.backward(pv, cls_cache, dlogits, grad)
            d = self.arch.latent_dim
            dmu += dcin[:, :d]
            dlv += dcin[:, d : 2 * d] * var
        dh = self.mu_head.backward(pv, mu_cache, dmu, grad)
        dh = dh + self.lv_head.backward(pv, lv_cache, dlv, grad)
        self.enc.backward(pv, enc_cache, dh, grad, need_input_grad=False)
        return loss, parts, grad


def tile_lowdim(x_l: np.ndarray, times: int) -> np.ndarray:
    """Repeat every low-dimensional entry ``times`` times: (a, b) -> (a.., b..)."""
    return np.repeat(np.asarray(x_l, dtype=np.float64), times, axis=-1)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recon: float = float("nan")
    kl: float = float("nan")
    ce: float = float("nan")

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "recon": self.recon, "kl": self.kl, "ce": self.ce}


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def run_minibatch_adam(
    params: np.ndarray,
    n: int,
    step: Callable[[np.ndarray, int], tuple[float, dict, np.ndarray]],
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    components: tuple[str, ...] = ("recon", "kl", "ce"),
) -> list[dict]:
    """Shared mini-batch Adam loop.

    ``step(indices, global_step)`` returns (loss, parts, grad) for the batch
    and ``params`` is updated in place. Raises TrainingDiverged carrying the
    history so far if a loss or gradient is non-finite.
    """
    state = AdamState(lr=config.lr)
    shuffle = make_rng(derive_seed(config.seed, "shuffle"))
    history: list[dict] = []
    gstep = 0
    for epoch in range(config.epochs):
        sums = {"loss": 0.0, **{c: 0.0 for c in components}}
        for idx in _batches(n, config.batch_size, shuffle):
            loss, parts, grad = step(idx, gstep)
            gstep += 1
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {gstep}", history)
            adam_step(params, grad, state)
            w = len(idx) / n
            sums["loss"] += loss * w
            for c in components:
                sums[c] += parts.get(c, float("nan")) * w
        rec = EpochRecord(epoch, **sums)
        history.append(rec.as_dict())
        log.debug("epoch %d loss %.6f", epoch, rec.loss)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def train(dataset, config: TrainConfig = TrainConfig(), arch: SvaeArch = SvaeArch(),
          model: Svae | None = None) -> tuple[Svae, list[dict]]:
    """Train an SVAE jointly on the unified objective with mini-batch Adam.

    ``dataset`` is anything exposing ``x_h``, ``x_l`` and ``y`` arrays.
    """
    x_h, x_l, y = _arrays(dataset)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    alpha = config.alpha_eff(n)
    if model is None:
        model = Svae(arch, sigma=config.sigma, alpha_eff=alpha).init(derive_seed(config.seed, "init"))
    eps_rng = make_rng(derive_seed(config.seed, "eps"))
    d = model.arch.latent_dim

    def step(idx, _):
        eps = eps_rng.standard_normal((config.mc_samples, len(idx), d))
        xl = None if x_l is None else x_l[idx]
        return model.loss_and_grad(x_h[idx], xl, y[idx], eps, alpha_eff=alpha)

    history = run_minibatch_adam(model.pv.data, n, step, config)
    return model, history


def _arrays(dataset):
    x_h = np.asarray(dataset.x_h, dtype=np.float64)
    x_l = None if getattr(dataset, "x_l", None) is None else np.asarray(dataset.x_l, dtype=np.float64)
    y = _check_labels(np.asarray(dataset.y), N_CLASSES)
    if not np.all(np.isfinite(x_h)) or (x_l is not None and not np.all(np.isfinite(x_l))):
        raise NumericError("training inputs contain non-finite values")
    return x_h, x_l, y


def predict(model: Svae, x_h, x_l):
    return model.predict(x_h, x_l)

