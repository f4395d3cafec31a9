"""Command-line driver: gen-data, train, eval, compare, figures.

Every subcommand accepts ``--config FILE``, a ``key = value`` text file
(``#`` comments). Keys are the long flag names with dashes replaced by
underscores, plus the generator scenario keys for ``gen-data``; per-kind
training overrides use ``KIND.KEY`` (e.g. ``svae-uni.lr = 0.0001``).
Command-line flags win over the file.

Relative output paths are resolved against ``$FIELDSVAE_OUT`` (default: the
working directory). Errors print one line ``error code=NAME exit=N: text``
to stderr; exit codes are 0 ok, 2 usage/config, 3 data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmark as bm
from .checkpoint import MODEL_KINDS, CheckpointError, load_model, read_header, save_model
from .evaluation import analysis, plots
from .evaluation.metrics import MetricsError, evaluate
from .fielddata.dataset import LOWDIM_BANDS_DEG, DatasetError, load_dataset, preprocess_scan, rebalance, save_dataset, split_dataset
from .fielddata.episodes import CLASS_NAMES, generate_from_scenario
from .fielddata.scenario import ConfigError, ScenarioConfig, parse_scenario
from .fielddata.scene import SceneError, scan_to_points
from .numeric import NumericError, derive_seed, make_rng
from .svae import RANGE_CLIP_M, TrainConfig, TrainingDiverged

log = logging.getLogger("fieldsvae")

OUT_ENV = "FIELDSVAE_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
_CODE_NAMES = {EXIT_USAGE: "usage", EXIT_DATA: "data", EXIT_NUMERIC: "numeric"}
TRAIN_KEYS = ("epochs", "batch_size", "lr", "alpha_mode", "alpha", "sigma", "mc_samples")
_SCENARIO_KEYS = {f.name for f in dataclasses.fields(ScenarioConfig)}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


# -- config ----------------------------------------------------------------------

def read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _setting(args, cfg: dict, key: str, cast, default):
    """Flag value if given, else config file value, else default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError:
            raise CliError(f"config key {key}: cannot parse {cfg[key]!r}") from None
    return default


def _check_keys(cfg: dict, allowed: set[str]) -> None:
    for k in cfg:
        base = k.split(".", 1)
        if k in allowed or (len(base) == 2 and base[0] in MODEL_KINDS and base[1] in TRAIN_KEYS):
            continue
        raise CliError(f"unknown config key {k!r}")


def _train_config(kind: str, seed: int, args, cfg: dict) -> TrainConfig:
    base = bm.default_config(kind, seed)
    casts = {"epochs": int, "batch_size": int, "lr": float, "alpha_mode": str, "alpha": float,
             "sigma": float, "mc_samples": int}
    values = {}
    for key, cast in casts.items():
        v = getattr(args, key, None)
        if v is None:
            raw = cfg.get(f"{kind}.{key}", cfg.get(key))
            if raw is not None:
                try:
                    v = cast(raw)
                except ValueError:
                    raise CliError(f"config key {key}: cannot parse {raw!r}") from None
        if v is not None:
            values[key] = v
    try:
        return dataclasses.replace(base, **values)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _check_kind(kind: str) -> str:
    if kind not in MODEL_KINDS:
        raise CliError(f"unknown model kind {kind!r}; expected one of: {', '.join(MODEL_KINDS)}")
    return kind


# -- output paths and manifest ---------------------------------------------------

def out_path(p: str | Path) -> Path:
    p = Path(p)
    if not p.is_absolute():
        p = Path(os.environ.get(OUT_ENV, ".")) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def update_manifest(directory: Path, command: str, effective: dict, artifacts: list[Path], **fields) -> Path:
    """Append a step to ``manifest.json`` in ``directory`` and refresh artifact hashes."""
    path = directory / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {"tool": "fieldsvae", "artifacts": {}, "steps": []}
    eff = {k: effective[k] for k in sorted(effective)}
    step = {
        "command": command, "tool_version": __version__, "config": eff,
        "config_hash": hashlib.sha256(json.dumps(eff, sort_keys=True).encode()).hexdigest()[:16],
        "output_dir": str(directory), "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": sorted(str(a.name) for a in artifacts), **fields,
    }
    man["steps"].append(step)
    for a in artifacts:
        man["artifacts"][a.name] = sha256_file(a)
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def _load(path) -> "object":
    try:
        return load_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc.strerror}", EXIT_DATA) from None


def _sidecar(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".json")


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> int:
    _check_keys(cfg, _SCENARIO_KEYS | {"seed", "out", "test_fraction"})
    seed = _setting(args, cfg, "seed", int, 0)
    test_fraction = _setting(args, cfg, "test_fraction", float, bm.TEST_FRACTION)
    scenario_text = "".join(f"{k} = {v}\n" for k, v in cfg.items() if k in _SCENARIO_KEYS)
    sc = parse_scenario(scenario_text)
    out = out_path(_setting(args, cfg, "out", str, "data/dataset.txt"))
    full = generate_from_scenario(sc, seed)
    train, test = split_dataset(full, test_fraction, make_rng(derive_seed(seed, "split")))
    stem = out.with_suffix("")
    paths = [out, Path(f"{stem}.train.txt"), Path(f"{stem}.test.txt")]
    for ds, p in zip((full, train, test), paths):
        save_dataset(ds, p)
    counts = full.class_counts()
    for c, name in enumerate(CLASS_NAMES):
        print(f"{name}: {counts[c]}")
    print(f"total: {len(full)} samples, {len(full.runs())} runs; train {len(train)} / test {len(test)}")
    update_manifest(out.parent, "gen-data", {"seed": seed, "test_fraction": test_fraction, **dataclasses.asdict(sc)},
                    paths, seeds=[seed], dataset=str(out))
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    _check_keys(cfg, {"kind", "dataset", "out", "seed", "no_rebalance", *TRAIN_KEYS})
    kind = _check_kind(_setting(args, cfg, "kind", str, "svae"))
    seed = _setting(args, cfg, "seed", int, 0)
    dataset = _setting(args, cfg, "dataset", str, None)
    if not dataset:
        raise CliError("train needs --dataset")
    tc = _train_config(kind, seed, args, cfg)
    ds = _load(dataset)
    train_runs = ds.runs()
    if not ds.resampled and not args.no_rebalance:
        ds = rebalance(ds, make_rng(derive_seed(seed, "rebalance")))
    out = out_path(_setting(args, cfg, "out", str, f"models/{kind}-s{seed}.ckpt"))
    hist_path = out.with_name(out.name + ".history.csv")
    try:
        model, history = bm.train_model(kind, ds, tc)
    except TrainingDiverged as exc:
        _write_history(exc.history, hist_path)
        raise CliError(f"training diverged ({exc}); partial history in {hist_path}", EXIT_NUMERIC) from None
    save_model(model, out)
    _write_history(history, hist_path)
    meta = {"kind": kind, "seed": seed, "dataset": str(dataset), "dataset_sha256": sha256_file(Path(dataset)),
            "train_runs": train_runs, "train_samples": len(ds), **bm.run_meta(kind, tc, len(ds))}
    _sidecar(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    hdr = read_header(out)
    print(f"{kind} trained on {len(ds)} samples; checkpoint {out}")
    print("header " + " ".join(f"{k}={hdr.hyper[k]}" for k in sorted(hdr.hyper)))
    update_manifest(out.parent, "train", {"kind": kind, "seed": seed, **dataclasses.asdict(tc)},
                    [out, hist_path, _sidecar(out)], seeds=[seed], kinds=[kind], dataset=str(dataset))
    return EXIT_OK


def _write_history(history: list[dict], path: Path) -> None:
    keys = sorted({k for rec in history for k in rec})
    lines = [",".join(keys)] + [",".join(repr(float(rec.get(k, float("nan")))) for k in keys) for rec in history]
    path.write_text("\n".join(lines) + "\n")


def _load_ckpt(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc.strerror}", EXIT_DATA) from None


def _checkpoint_beams(hdr) -> int | None:
    """Scan width a checkpoint was trained on; the MLP's input also holds x_l."""
    dim = hdr.hyper.get("input_dim")
    if dim is not None and hdr.kind == "mlp":
        dim -= 2 + len(LOWDIM_BANDS_DEG)
    return dim


def cmd_eval(args, cfg) -> int:
    _check_keys(cfg, {"checkpoint", "dataset", "out"})
    ckpt = Path(_setting(args, cfg, "checkpoint", str, ""))
    dataset = _setting(args, cfg, "dataset", str, None)
    if not str(ckpt) or not dataset:
        raise CliError("eval needs --checkpoint and --dataset")
    model = _load_ckpt(ckpt)
    ds = _load(dataset)
    hdr = read_header(ckpt)
    beams = _checkpoint_beams(hdr)
    if beams not in (None, ds.raw.shape[1]):
        raise CliError(f"checkpoint expects {beams} beams, dataset has {ds.raw.shape[1]}", EXIT_DATA)
    side = _sidecar(ckpt)
    meta = json.loads(side.read_text()) if side.exists() else {}
    run_meta = {k: meta[k] for k in ("epochs", "batch_size", "lr", "alpha_mode", "alpha_eff") if k in meta}
    report = evaluate(model, ds, seed=meta.get("seed"), train_runs=meta.get("train_runs"), meta=run_meta)
    prefix = out_path(_setting(args, cfg, "out", str, f"reports/{ckpt.stem}"))
    txt, csv_path = Path(f"{prefix}.txt"), Path(f"{prefix}.csv")
    txt.write_text(report.to_text())
    csv_path.write_text(report.to_csv())
    for w in report.warnings:
        print(f"WARNING {w}", file=sys.stderr)
    print(report.to_text(), end="")
    update_manifest(prefix.parent, "eval", {"checkpoint": str(ckpt), "dataset": str(dataset)}, [txt, csv_path],
                    dataset=str(dataset), kinds=[report.kind])
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    _check_keys(cfg, {"dataset", "out", "seed", "seeds", "kinds", "test_fraction", *TRAIN_KEYS})
    dataset = _setting(args, cfg, "dataset", str, None)
    if not dataset:
        raise CliError("compare needs --dataset")
    n_seeds = _setting(args, cfg, "seeds", int, len(bm.SEEDS))
    if n_seeds < 1:
        raise CliError("seeds must be >= 1")
    kinds = _setting(args, cfg, "kinds", str, ",".join(bm.KIND_ORDER)).split(",")
    for k in kinds:
        _check_kind(k)
    root = _setting(args, cfg, "seed", int, bm.DATA_SEED)
    test_fraction = _setting(args, cfg, "test_fraction", float, bm.TEST_FRACTION)
    splits = bm.split_and_balance(_load(dataset), root, test_fraction)
    seeds = tuple(range(n_seeds))
    configs = {k: _train_config(k, 0, args, cfg) for k in kinds}
    res = bm.sweep(splits, kinds=kinds, seeds=seeds, configs=configs,
                   on_result=lambda r: log.info("%s seed %s: average %.2f kappa %.4f", r.kind, r.seed, r.average, r.kappa))
    out = out_path(Path(_setting(args, cfg, "out", str, "compare")) / "summary.csv")
    raw = out.with_name("raw.csv")
    out.write_text(bm.summary_table(res, kinds))
    raw.write_text(bm.raw_table(res))
    artifacts = [out, raw]
    rows = bm.summary_rows(res, kinds)
    if rows:
        bars = out.with_name("summary.svg")
        plots.metrics_bars({bm.DISPLAY[k]: [m for m, _ in v[:5]] for k, v in rows.items()}, bars)
        artifacts.append(bars)
    print(out.read_text(), end="")
    update_manifest(out.parent, "compare", {"dataset": str(dataset), "seed": root, "test_fraction": test_fraction,
                                            **{f"{k}.{f}": v for k, c in configs.items()
                                               for f, v in dataclasses.asdict(c).items() if f != "seed"}},
                    artifacts, seeds=list(seeds), kinds=kinds, dataset=str(dataset))
    if res.failures and not res.reports:
        raise CliError("every model failed", EXIT_NUMERIC)
    return EXIT_OK


def _exemplars(ds) -> list[int]:
    return [int(np.flatnonzero(ds.y == c)[0]) for c in range(4) if np.any(ds.y == c)]


def cmd_figures(args, cfg) -> int:
    _check_keys(cfg, {"checkpoint", "dataset", "out", "grid_n", "what"})
    ckpt = _setting(args, cfg, "checkpoint", str, None)
    if not ckpt:
        raise CliError("figures needs --checkpoint")
    what = _setting(args, cfg, "what", str, "all")
    if what not in ("all", "grid", "recon", "timeline"):
        raise CliError(f"unknown figure {what!r}; expected all, grid, recon or timeline")
    model = _load_ckpt(ckpt)
    outdir = out_path(Path(_setting(args, cfg, "out", str, "figures")) / "x").parent
    n = _setting(args, cfg, "grid_n", int, 5)
    made = []
    decoder = hasattr(model, "decode")
    if what in ("all", "grid"):
        if not decoder:
            raise CliError("model has no decoder")
        try:
            grid = analysis.latent_grid_map(model, n=n)
        except analysis.AnalysisError as exc:
            raise CliError(str(exc)) from None
        made.append(plots.grid_map(grid, outdir / "grid_map.svg"))
    dataset = _setting(args, cfg, "dataset", str, None)
    if what in ("recon", "timeline", "all") and not dataset:
        raise CliError(f"figure {what!r} needs --dataset")
    if dataset:
        ds = _load(dataset)
        if what in ("all", "recon"):
            if not decoder:
                raise CliError("model has no decoder")
            panels = []
            for i in _exemplars(ds):
                x_hat = model.reconstruct(ds.x_h[i], ds.x_l[i])[: ds.raw.shape[1]]
                orig = scan_to_points(np.minimum(ds.raw[i], RANGE_CLIP_M))
                recon = scan_to_points(np.clip(x_hat, 0, 1) * RANGE_CLIP_M)
                panels.append((CLASS_NAMES[ds.y[i]], orig, recon))
            made.append(plots.reconstruction_panels(panels, outdir / "reconstructions.svg"))
        if what in ("all", "timeline"):
            for run_id in ds.runs():
                tr = analysis.sensitivity_trace(model, ds.run(run_id))
                made.append(plots.timeline([("ground truth", tr.truth), (getattr(model, "kind", "model"), tr.emitted)],
                                           outdir / f"timeline_{run_id}.svg", probs=tr.probs, t=tr.t))
    for p in made:
        print(p)
    update_manifest(outdir, "figures", {"checkpoint": str(ckpt), "dataset": str(dataset), "grid_n": n,
                                        "what": what}, made, dataset=str(dataset))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fieldsvae", description="Supervised-VAE failure identification on simulated field scans.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--out")
        return sp

    g = common(sub.add_parser("gen-data", help="simulate episodes and write dataset files"))
    g.add_argument("--seed", type=int)
    g.add_argument("--test-fraction", type=float, dest="test_fraction")

    def train_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int, dest="batch_size")
        sp.add_argument("--lr", type=float, help="Adam learning rate (default 0.0005 except where calibrated)")
        sp.add_argument("--alpha-mode", dest="alpha_mode", help="literal (0.1 N) or per-sample (0.1)")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--mc-samples", type=int, dest="mc_samples")

    t = common(sub.add_parser("train", help="train one model"))
    t.add_argument("--kind", help=f"one of {', '.join(MODEL_KINDS)}")
    t.add_argument("--dataset")
    t.add_argument("--seed", type=int)
    t.add_argument("--no-rebalance", action="store_true", dest="no_rebalance")
    train_flags(t)

    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")

    c = common(sub.add_parser("compare", help="train and evaluate all models over several seeds"))
    c.add_argument("--dataset")
    c.add_argument("--seeds", type=int, help="number of seeds (default 10)")
    c.add_argument("--seed", type=int, help="root seed of the split and rebalancing")
    c.add_argument("--kinds", help="comma-separated model kinds")
    c.add_argument("--test-fraction", type=float, dest="test_fraction")
    train_flags(c)

    f = common(sub.add_parser("figures", help="grid map, reconstructions and timelines"))
    f.add_argument("--checkpoint")
    f.add_argument("--dataset")
    f.add_argument("--grid-n", type=int, dest="grid_n")
    f.add_argument("--what", help="all, grid, recon or timeline")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "figures": cmd_figures}


def _fail(code: int, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"error code={_CODE_NAMES[code]} exit={code}: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise CliError(f"missing command; expected one of: {', '.join(COMMANDS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args, read_config(args.config))
    except CliError as exc:
        return _fail(exc.code, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_USAGE, f"config: {exc}")
    except (DatasetError, CheckpointError, MetricsError, SceneError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (TrainingDiverged, NumericError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
