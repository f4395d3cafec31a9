"""Reference calibration run for the synthetic benchmark.

    python calibration/calibrate.py sweep [n_seeds]     # all five models, default configs
    python calibration/calibrate.py grid KIND [epochs]  # lr grid {1e-4, 5e-4, 1e-3}, seed 0
    python calibration/calibrate.py control [n_seeds]   # SVAE with alpha = 0

Results are written next to this file.
"""
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from fieldsvae import benchmark as bm
from fieldsvae.evaluation.metrics import evaluate
from fieldsvae.numeric import derive_seed, make_rng

HERE = Path(__file__).resolve().parent
LR_GRID = (1e-4, 5e-4, 1e-3)


def main(argv):
    mode = argv[0] if argv else "sweep"
    t0 = time.perf_counter()
    splits = bm.prepare()
    print(f"data: train {len(splits.train)} ({len(splits.train_balanced)} rebalanced) "
          f"test {len(splits.test)} counts {splits.test.class_counts()} [{time.perf_counter() - t0:.1f}s]", flush=True)
    if mode == "sweep":
        n = int(argv[1]) if len(argv) > 1 else 5
        res = bm.sweep(splits, seeds=bm.SEEDS[:n],
                       on_result=lambda r: print(f"{r.kind} {r.seed} avg {r.average:.2f} kappa {r.kappa:.4f}", flush=True))
        (HERE / "sweep_raw.csv").write_text(bm.raw_table(res))
        (HERE / "sweep_summary.csv").write_text(bm.summary_table(res))
        print(bm.summary_table(res))
    elif mode == "grid":
        kind = argv[1]
        lines = ["kind,lr,epochs,average,kappa,seconds"]
        for lr in LR_GRID:
            cfg = bm.default_config(kind, seed=0, lr=lr)
            if len(argv) > 2:
                cfg = replace(cfg, epochs=int(argv[2]))
            t = time.perf_counter()
            # validation split carved from the training runs, never the test runs
            inner = bm.split_and_balance(splits.train, derive_seed(bm.DATA_SEED, "validation"))
            fit, val = inner.train_balanced, inner.test
            model, _ = bm.train_model(kind, fit, cfg)
            rep = evaluate(model, val)
            lines.append(f"{kind},{lr},{cfg.epochs},{rep.average:.2f},{rep.kappa:.4f},{time.perf_counter() - t:.1f}")
            print(lines[-1], flush=True)
        with open(HERE / "lr_grid.csv", "a") as fh:
            fh.write("\n".join(lines[1:] if (HERE / "lr_grid.csv").exists() else lines) + "\n")
    elif mode == "control":
        n = int(argv[1]) if len(argv) > 1 else 5
        bal = bm.balanced_subset(splits.test, make_rng(derive_seed(bm.DATA_SEED, "balanced-test")))
        lines = ["seed,average,accuracy_balanced"]
        for seed in bm.SEEDS[:n]:
            model, _ = bm.train_model("svae", splits.train_balanced, bm.default_config("svae", seed, alpha=0.0))
            rep = evaluate(model, bal)
            acc = float(np.mean(model.predict(bal.x_h, bal.x_l)[0] == bal.y))
            lines.append(f"{seed},{rep.average:.2f},{100 * acc:.2f}")
            print(lines[-1], flush=True)
        (HERE / "control_alpha0.csv").write_text("\n".join(lines) + "\n")
    print(f"total {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main(sys.argv[1:])
