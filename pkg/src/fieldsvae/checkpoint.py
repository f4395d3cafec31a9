"""Versioned binary checkpoints for every model kind.

Layout (all integers little-endian)::

    magic        8 bytes   b"FSVAECKP"
    version      u16       FORMAT_VERSION
    kind tag     u8        see KIND_TAGS
    n_arrays     u32
    per array:   u16 name length, utf-8 name, u8 ndim, ndim x u32 dims
    weights      float64 little-endian, row-major, arrays in table order
    n_hyper      u16
    per entry:   u16 key length, utf-8 key, u8 type ('f' f64 | 'i' i64 | 's' u16 length + utf-8)

The header (everything except the weight payload) is enough to describe the
model; see :func:`read_header`.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import BaselineKind, PcaMlr, PcaModel, SoftmaxClassifier
from .svae import RANGE_CLIP_M, Svae, SvaeArch

MAGIC = b"FSVAECKP"
FORMAT_VERSION = 1
KIND_TAGS = {"svae": 0, "mlp": 1, "pca-mlr": 2, "vae-mlp": 3, "svae-uni": 4}
MODEL_KINDS = tuple(KIND_TAGS)
assert set(MODEL_KINDS[1:]) == {k.value for k in BaselineKind}


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointHeader:
    version: int
    kind: str
    arrays: list[tuple[str, tuple[int, ...]]]
    hyper: dict


def _ints(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",")) if text else ()


def _model_payload(model) -> tuple[str, list[tuple[str, np.ndarray]], dict]:
    kind = getattr(model, "kind", None)
    if kind not in KIND_TAGS:
        raise CheckpointError(f"cannot checkpoint model of kind {kind!r}")
    if isinstance(model, Svae):
        a = model.arch
        hyper = {
            "latent_dim": a.latent_dim, "sigma": model.sigma, "alpha_eff": model.alpha_eff,
            "range_clip_m": RANGE_CLIP_M, "input_dim": a.input_dim, "enc_hidden": _ints(a.enc_hidden),
            "cls_hidden": _ints(a.cls_hidden), "lowdim_dim": a.lowdim_dim, "n_classes": a.n_classes,
            "lowdim_route": a.lowdim_route,
        }
        return kind, [(n, model.pv.view(n)) for n in model.pv.names], hyper
    if isinstance(model, PcaMlr):
        pca, mlr = model.pca, model.mlr
        arrays = [("pca.mean", pca.mean), ("pca.components", pca.components),
                  ("pca.explained_variance", pca.explained_variance)]
        arrays += [(n, mlr.pv.view(n)) for n in mlr.pv.names]
        hyper = {"k": pca.k, "total_variance": float(pca.total_variance), "range_clip_m": RANGE_CLIP_M,
                 "input_dim": int(pca.mean.shape[0])}
        return kind, arrays, hyper
    if isinstance(model, SoftmaxClassifier):
        dims = model.dims
        hyper = {"input_dim": dims[0], "hidden": _ints(dims[1:-1]), "n_classes": dims[-1],
                 "range_clip_m": RANGE_CLIP_M}
        return kind, [(n, model.pv.view(n)) for n in model.pv.names], hyper
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def dumps(model) -> bytes:
    kind, arrays, hyper = _model_payload(model)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HBI", FORMAT_VERSION, KIND_TAGS[kind], len(arrays)))
    for name, arr in arrays:
        out.write(_pack_str(name))
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, arr in arrays:
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    out.write(struct.pack("<H", len(hyper)))
    for key in sorted(hyper):
        val = hyper[key]
        out.write(_pack_str(key))
        if isinstance(val, str):
            out.write(b"s" + _pack_str(val))
        elif isinstance(val, (int, np.integer)) and not isinstance(val, bool):
            out.write(b"i" + struct.pack("<q", int(val)))
        else:
            out.write(b"f" + struct.pack("<d", float(val)))
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()


def _parse(buf: bytes, with_weights: bool):
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, tag, n_arrays = r.unpack("<HBI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kinds = {v: k for k, v in KIND_TAGS.items()}
    if tag not in kinds:
        raise CheckpointError(f"unknown model kind tag {tag}")
    table = []
    for _ in range(n_arrays):
        name = r.string()
        (ndim,) = r.unpack("<B")
        table.append((name, tuple(r.unpack(f"<{ndim}I"))))
    arrays = {}
    for name, shape in table:
        n = int(np.prod(shape))
        raw = r.take(8 * n)
        if with_weights:
            arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    (n_hyper,) = r.unpack("<H")
    hyper = {}
    for _ in range(n_hyper):
        key = r.string()
        t = r.take(1)
        if t == b"s":
            hyper[key] = r.string()
        elif t == b"i":
            hyper[key] = r.unpack("<q")[0]
        elif t == b"f":
            hyper[key] = r.unpack("<d")[0]
        else:
            raise CheckpointError(f"bad hyperparameter type {t!r} for {key}")
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint")
    return CheckpointHeader(version, kinds[tag], table, hyper), arrays


def _fill(pv, arrays: dict, table) -> None:
    expected = [(n, pv.shapes[n]) for n in pv.names]
    got = [(n, s) for n, s in table if n in pv.shapes]
    if got != expected:
        raise CheckpointError("array table does not match the model layout")
    for name in pv.names:
        pv.view(name)[...] = arrays[name]


def loads(buf: bytes):
    header, arrays = _parse(buf, with_weights=True)
    h = header.hyper
    try:
        if header.kind in ("svae", "vae-mlp", "svae-uni"):
            arch = SvaeArch(
                input_dim=h["input_dim"], enc_hidden=_parse_ints(h["enc_hidden"]), latent_dim=h["latent_dim"],
                cls_hidden=_parse_ints(h["cls_hidden"]), lowdim_dim=h["lowdim_dim"], n_classes=h["n_classes"],
                lowdim_route=h["lowdim_route"],
            )
            model = Svae(arch, sigma=h["sigma"], alpha_eff=h["alpha_eff"])
            model.kind = header.kind
            _fill(model.pv, arrays, header.arrays)
            return model
        if header.kind == "mlp":
            model = SoftmaxClassifier(h["input_dim"], _parse_ints(h["hidden"]), h["n_classes"], kind="mlp")
            _fill(model.pv, arrays, header.arrays)
            return model
        pca = PcaModel(arrays["pca.mean"], arrays["pca.components"], arrays["pca.explained_variance"],
                       h["total_variance"])
        mlr = SoftmaxClassifier(arrays["net.0.w"].shape[1], hidden=(), kind="mlr")
        _fill(mlr.pv, arrays, header.arrays)
        return PcaMlr(pca, mlr)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing field {exc}") from None


def save_model(model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path: str | Path):
    return loads(Path(path).read_bytes())


def read_header(path: str | Path) -> CheckpointHeader:
    return _parse(Path(path).read_bytes(), with_weights=False)[0]
