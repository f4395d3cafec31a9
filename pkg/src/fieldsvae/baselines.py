"""Comparison models: plain MLP, PCA + multinomial logistic regression,
two-stage VAE features + MLP, and the uni-modal SVAE."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .numeric import (
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
from .svae import (
    N_CLASSES,
    UNIMODAL_ARCH,
    Svae,
    SvaeArch,
    TrainConfig,
    TrainingDiverged,
    _arrays,
    _check_labels,
    run_minibatch_adam,
)
from .svae import train as train_svae

MLP_HIDDEN = (1024, 512, 512)
PCA_COMPONENTS = 30


class BaselineKind(enum.Enum):
    MLP = "mlp"
    PCA_MLR = "pca-mlr"
    VAE_MLP = "vae-mlp"
    SVAE_UNI = "svae-uni"


# -- softmax classifiers ----------------------------------------------------------

class SoftmaxClassifier:
    """Feed-forward softmax classifier; with no hidden layers it is an MLR."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...] = MLP_HIDDEN, n_classes: int = N_CLASSES,
                 kind: str = "mlp"):
        self.kind = kind
        self.net = Stack("net", (input_dim, *hidden, n_classes))
        self.pv = ParameterVector(self.net.shapes())

    @property
    def dims(self) -> tuple[int, ...]:
        return self.net.dims

    def init(self, seed: int) -> "SoftmaxClassifier":
        self.net.init(self.pv, make_rng(seed))
        return self

    def features(self, x_h, x_l) -> np.ndarray:
        return np.concatenate([np.asarray(x_h, dtype=np.float64), np.asarray(x_l, dtype=np.float64)], axis=-1)

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[-1] != self.dims[0]:
            raise NumericError(f"input length {inputs.shape[-1]}, expected {self.dims[0]}")
        return self.net.forward(self.pv, inputs)[0]

    def loss_and_grad(self, inputs: np.ndarray, y: np.ndarray, need_grad: bool = True):
        y = _check_labels(np.atleast_1d(y), self.dims[-1])
        inputs = np.atleast_2d(inputs)
        out, cache = self.net.forward(self.pv, inputs)
        logp = log_softmax(out)
        batch = len(y)
        loss = float(-np.mean(logp[np.arange(batch), y]))
        if not need_grad:
            return loss, {"ce": loss}, None
        grad = self.pv.zeros_like()
        d = np.exp(logp)
        d[np.arange(batch), y] -= 1.0
        self.net.backward(self.pv, cache, d / batch, grad, need_input_grad=False)
        return loss, {"ce": loss}, grad

    def predict_proba(self, x_h, x_l) -> np.ndarray:
        return softmax(self.logits(self.features(x_h, x_l)))

    def predict(self, x_h, x_l):
        probs = self.predict_proba(x_h, x_l)
        labels = np.argmax(probs, axis=-1)
        return (int(labels), probs) if probs.ndim == 1 else (labels, probs)


def train_mlp(dataset, config: TrainConfig, hidden: tuple[int, ...] = MLP_HIDDEN):
    """MLP on the concatenated (x_h, x_l) input, trained on cross-entropy."""
    x_h, x_l, y = _arrays(dataset)
    model = SoftmaxClassifier(x_h.shape[1] + x_l.shape[1], hidden).init(derive_seed(config.seed, "init"))
    inputs = model.features(x_h, x_l)

    def step(idx, _):
        return model.loss_and_grad(inputs[idx], y[idx])

    history = run_minibatch_adam(model.pv.data, len(y), step, config, components=("ce",))
    return model, history


# -- PCA --------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, dim), orthonormal rows
    explained_variance: np.ndarray  # per retained component
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def explained_fraction(self) -> float:
        if self.total_variance == 0.0:
            return 1.0
        return float(np.sum(self.explained_variance) / self.total_variance)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, code: np.ndarray) -> np.ndarray:
        return np.asarray(code, dtype=np.float64) @ self.components + self.mean


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its first nonzero entry is positive."""
    out = np.array(vectors, dtype=np.float64)
    for row in out:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return out


def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs a 2-D array with at least 2 samples")
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k={k} outside [1, {x.shape[1]}]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2 / (x.shape[0] - 1)
    comps = vt[:k]
    if comps.shape[0] < k:
        # rank-deficient tail: complete the basis with orthonormal directions
        q, _ = np.linalg.qr(np.hstack([comps.T, np.eye(x.shape[1])]))
        comps = q[:, :k].T
    ev = np.zeros(k)
    ev[: min(k, var.size)] = var[:k]
    return PcaModel(mean, fix_signs(comps), ev, float(np.sum(var)))


pca_project = PcaModel.project
pca_reconstruct = PcaModel.reconstruct


# -- PCA + MLR --------------------------------------------------------------------

class PcaMlr:
    kind = BaselineKind.PCA_MLR.value

    def __init__(self, pca: PcaModel, mlr: SoftmaxClassifier):
        self.pca = pca
        self.mlr = mlr

    def features(self, x_h, x_l) -> np.ndarray:
        return np.concatenate([self.pca.project(x_h), np.asarray(x_l, dtype=np.float64)], axis=-1)

    def predict_proba(self, x_h, x_l) -> np.ndarray:
        return softmax(self.mlr.logits(self.features(x_h, x_l)))

    def predict(self, x_h, x_l):
        probs = self.predict_proba(x_h, x_l)
        labels = np.argmax(probs, axis=-1)
        return (int(labels), probs) if probs.ndim == 1 else (labels, probs)


def train_mlr(inputs: np.ndarray, y: np.ndarray, config: TrainConfig, max_steps: int = 5000,
              grad_tol: float = 1e-6, model: SoftmaxClassifier | None = None):
    """Full-batch Adam on the convex softmax-regression loss.

    Stops when the gradient norm drops below ``grad_tol`` or after
    ``max_steps``. History holds one record per step block of 100.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    y = _check_labels(y, N_CLASSES)
    if model is None:
        model = SoftmaxClassifier(inputs.shape[1], hidden=(), kind="mlr").init(derive_seed(config.seed, "init"))
    state = AdamState(lr=config.lr)
    history = []
    for step in range(max_steps):
        loss, _, grad = model.loss_and_grad(inputs, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite MLR loss at step {step}", history)
        gnorm = float(np.linalg.norm(grad))
        if step % 100 == 0:
            history.append({"step": step, "loss": loss, "grad_norm": gnorm})
        if gnorm < grad_tol:
            break
        adam_step(model.pv.data, grad, state)
    loss = model.loss_and_grad(inputs, y, need_grad=False)[0]
    history.append({"step": step + 1, "loss": loss, "grad_norm": gnorm})
    return model, history


def train_pca_mlr(dataset, config: TrainConfig, k: int = PCA_COMPONENTS, max_steps: int = 5000,
                  grad_tol: float = 1e-6):
    x_h, x_l, y = _arrays(dataset)
    pca = pca_fit(x_h, k)
    inputs = np.concatenate([pca.project(x_h), x_l], axis=1)
    mlr, history = train_mlr(inputs, y, config, max_steps=max_steps, grad_tol=grad_tol)
    return PcaMlr(pca, mlr), history


# -- VAE features + MLP -------------------------------------------------------------

def parameter_hash(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()


def frozen_classifier_loss(model: Svae, cin: np.ndarray, y: np.ndarray, need_grad: bool = True):
    """Mean cross-entropy of the classifier head on fixed inputs; gradient is zero outside the head."""
    out, cache = model.cls.forward(model.pv, cin)
    logp = log_softmax(out)
    b = len(y)
    loss = float(-np.mean(logp[np.arange(b), y]))
    if not need_grad:
        return loss, None
    grad = model.pv.zeros_like()
    g = np.exp(logp)
    g[np.arange(b), y] -= 1.0
    model.cls.backward(model.pv, cache, g / b, grad, need_input_grad=False)
    return loss, grad


def train_vae_then_mlp(dataset, config: TrainConfig, classifier_epochs: int | None = None,
                       arch: SvaeArch = SvaeArch()):
    """Stage 1: VAE on the negative ELBO. Stage 2: classifier on frozen (mu, var, x_l).

    Returns the model and a dict with both stage histories plus the encoder
    hash taken before and after stage 2.
    """
    x_h, x_l, y = _arrays(dataset)
    n = len(y)
    model = Svae(arch, sigma=config.sigma, alpha_eff=0.0).init(derive_seed(config.seed, "init"))
    model.kind = BaselineKind.VAE_MLP.value
    eps_rng = make_rng(derive_seed(config.seed, "eps"))
    d = arch.latent_dim

    def vae_step(idx, _):
        eps = eps_rng.standard_normal((config.mc_samples, len(idx), d))
        loss, parts, grad = model.loss_and_grad(x_h[idx], x_l[idx], y[idx], eps, alpha_eff=0.0)
        return loss, {"recon": parts["recon"], "kl": parts["kl"]}, grad

    stage1 = run_minibatch_adam(model.pv.data, n, vae_step, config, components=("recon", "kl"))

    enc = model.span("encoder")
    before = parameter_hash(model.pv.data[enc])
    code = model.encode(x_h, x_l)
    cin = model.classifier_input(code, x_l)
    cls = model.span("classifier")
    cls_params = model.pv.data[cls]

    def cls_step(idx, _):
        loss, grad = frozen_classifier_loss(model, cin[idx], y[idx])
        return loss, {"ce": loss}, grad[cls]

    cfg2 = config if classifier_epochs is None else replace(config, epochs=classifier_epochs)
    cfg2 = replace(cfg2, seed=derive_seed(config.seed, "stage2"))
    stage2 = run_minibatch_adam(cls_params, n, cls_step, cfg2, components=("ce",))
    after = parameter_hash(model.pv.data[enc])
    return model, {"stage1": stage1, "stage2": stage2, "encoder_hash": (before, after)}


# -- uni-modal SVAE -------------------------------------------------------------------

def unimodal_arch(input_dim: int = 1080, lowdim_dim: int = 6) -> SvaeArch:
    return replace(UNIMODAL_ARCH, input_dim=input_dim, lowdim_dim=lowdim_dim)


def train_unimodal_svae(dataset, config: TrainConfig, arch: SvaeArch | None = None):
    """SVAE whose encoder sees x_h concatenated with x_l tiled to x_h's length."""
    arch = arch or unimodal_arch()
    if arch.lowdim_route != "tiled":
        raise ValueError("the uni-modal SVAE routes x_l through the encoder input")
    model, history = train_svae(dataset, config, arch=arch)
    model.kind = BaselineKind.SVAE_UNI.value
    return model, history


__all__ = [
    "BaselineKind",
    "PcaModel",
    "PcaMlr",
    "frozen_classifier_loss",
    "SoftmaxClassifier",
    "fix_signs",
    "parameter_hash",
    "pca_fit",
    "pca_project",
    "pca_reconstruct",
    "train_mlp",
    "train_mlr",
    "train_pca_mlr",
    "train_unimodal_svae",
    "train_vae_then_mlp",
]
