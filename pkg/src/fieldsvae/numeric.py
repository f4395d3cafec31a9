"""Dense layers with hand-derived gradients, Adam, and seeded sampling.

Everything is float64. Parameters of a model live in one flat vector and each
layer holds views into it, so the optimizer updates the whole model with a
handful of vectorized operations.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class NumericError(ValueError):
    """Raised on shape mismatches and non-finite values."""


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise NumericError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pre_activation, output)`` for a single vector or a row batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.fan_in or x.ndim not in (1, 2):
        raise NumericError(f"input shape {x.shape} incompatible with layer of fan_in {layer.fan_in}")
    pre = x @ layer.weights.T + layer.bias
    if layer.activation is Activation.RELU:
        out = np.maximum(pre, 0.0)
    else:
        out = pre
    return pre, out


def dense_backward(
    layer: DenseLayer,
    pre: np.ndarray,
    x: np.ndarray,
    grad_out: np.ndarray,
    need_input_grad: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients w.r.t. weights, bias and input given dL/d(output).

    For a batch the parameter gradients are summed over rows. The ReLU
    derivative at exactly zero is taken as zero.
    """
    if pre is None or x is None:
        raise NumericError("missing forward caches")
    if pre.shape != grad_out.shape or pre.shape[-1] != layer.fan_out or x.shape[-1] != layer.fan_in:
        raise NumericError(
            f"cache shapes pre={getattr(pre, 'shape', None)} x={getattr(x, 'shape', None)} "
            f"grad={grad_out.shape} do not match layer {layer.weights.shape}"
        )
    if pre.ndim != x.ndim or (pre.ndim == 2 and pre.shape[0] != x.shape[0]):
        raise NumericError("batch sizes of caches differ")
    if layer.activation is Activation.RELU:
        g = grad_out * (pre > 0.0)
    else:
        g = grad_out
    if g.ndim == 1:
        gw = np.outer(g, x)
        gb = g.copy()
    else:
        gw = g.T @ x
        gb = g.sum(axis=0)
    gx = g @ layer.weights if need_input_grad else None
    return gw, gb, gx


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class ParameterVector:
    """A flat float64 buffer carved into named weight/bias views."""

    def __init__(self, shapes: Sequence[tuple[str, tuple[int, ...]]]):
        self.names = [name for name, _ in shapes]
        self.shapes = {name: tuple(shape) for name, shape in shapes}
        if len(self.shapes) != len(self.names):
            raise NumericError("duplicate parameter names")
        self.offsets: dict[str, tuple[int, int]] = {}
        pos = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.offsets[name] = (pos, pos + size)
            pos += size
        self.data = np.zeros(pos, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.data.size

    def view(self, name: str, buf: np.ndarray | None = None) -> np.ndarray:
        buf = self.data if buf is None else buf
        lo, hi = self.offsets[name]
        return buf[lo:hi].reshape(self.shapes[name])

    def span(self, names: Sequence[str]) -> slice:
        """Contiguous slice covering ``names`` (which must be adjacent)."""
        lo = min(self.offsets[n][0] for n in names)
        hi = max(self.offsets[n][1] for n in names)
        if hi - lo != sum(self.offsets[n][1] - self.offsets[n][0] for n in names):
            raise NumericError("parameters are not contiguous")
        return slice(lo, hi)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.data)


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    _scratch: np.ndarray | None = field(default=None, repr=False)

    def reset(self, size: int) -> None:
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self._scratch = np.zeros(size)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """In-place Adam update with bias correction.

    A non-finite gradient leaves both ``params`` and ``state`` untouched.
    """
    if params.shape != grads.shape:
        raise NumericError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient; Adam step rejected")
    if state.m is None or state.m.shape != params.shape:
        if state.t != 0:
            raise NumericError("Adam state does not match parameters")
        state.reset(params.size)
        state.m = state.m.reshape(params.shape)
        state.v = state.v.reshape(params.shape)
        state._scratch = state._scratch.reshape(params.shape)
    t = state.t + 1
    m, v, tmp = state.m, state.v, state._scratch
    m *= state.beta1
    np.multiply(grads, 1.0 - state.beta1, out=tmp)
    m += tmp
    v *= state.beta2
    np.multiply(grads, grads, out=tmp)
    tmp *= 1.0 - state.beta2
    v += tmp
    # lr_t folds both bias corrections; eps is applied to the corrected v.
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    np.divide(v, c2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(m, tmp, out=tmp)
    tmp *= state.lr / c1
    params -= tmp
    state.t = t


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical seeds give identical draws."""
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(root: int, *keys: int | str) -> int:
    """Deterministic child seed for a component or worker."""
    words = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.extend(k.encode("utf-8"))
        else:
            words.append(int(k))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


def sample_standard_normal(rng: np.random.Generator, n: int | tuple[int, ...]) -> np.ndarray:
    shape = (n,) if isinstance(n, (int, np.integer)) else tuple(n)
    if any(s < 1 for s in shape):
        raise NumericError(f"sample count must be >= 1, got {n}")
    return rng.standard_normal(shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Stack:
    """A chain of dense layers whose parameters live in a ParameterVector.

    ``dims`` lists layer widths from input to output. Hidden layers use ReLU,
    the final layer uses ``out_activation``.
    """

    def __init__(self, prefix: str, dims: Sequence[int], out_activation: Activation = Activation.IDENTITY):
        if len(dims) < 2:
            raise NumericError("a stack needs at least an input and an output width")
        self.prefix = prefix
        self.dims = tuple(int(d) for d in dims)
        self.out_activation = out_activation

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"{self.prefix}.{i}.w", f"{self.prefix}.{i}.b"]
        return names

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for i in range(self.n_layers):
            out.append((f"{self.prefix}.{i}.w", (self.dims[i + 1], self.dims[i])))
            out.append((f"{self.prefix}.{i}.b", (self.dims[i + 1],)))
        return out

    def activation(self, i: int) -> Activation:
        return self.out_activation if i == self.n_layers - 1 else Activation.RELU

    def layers(self, pv: ParameterVector, buf: np.ndarray | None = None) -> list[DenseLayer]:
        return [
            DenseLayer(pv.view(f"{self.prefix}.{i}.w", buf), pv.view(f"{self.prefix}.{i}.b", buf), self.activation(i))
            for i in range(self.n_layers)
        ]

    def init(self, pv: ParameterVector, rng: np.random.Generator) -> None:
        for layer in self.layers(pv):
            bound = glorot_bound(layer.fan_in, layer.fan_out)
            layer.weights[...] = rng.uniform(-bound, bound, size=layer.weights.shape)
            layer.bias[...] = 0.0

    def forward(self, pv: ParameterVector, x: np.ndarray):
        cache = []
        h = x
        for layer in self.layers(pv):
            pre, out = dense_forward(layer, h)
            cache.append((h, pre))
            h = out
        return h, cache

    def backward(self, pv: ParameterVector, cache, grad_out: np.ndarray, grad_buf: np.ndarray,
                 need_input_grad: bool = True) -> np.ndarray | None:
        """Accumulate parameter gradients into ``grad_buf``; return dL/d(input)."""
        layers = self.layers(pv)
        g = grad_out
        for i in reversed(range(self.n_layers)):
            x, pre = cache[i]
            gw, gb, g = dense_backward(layers[i], pre, x, g, need_input_grad=need_input_grad or i > 0)
            pv.view(f"{self.prefix}.{i}.w", grad_buf)[...] += gw
            pv.view(f"{self.prefix}.{i}.b", grad_buf)[...] += gb
        return g
