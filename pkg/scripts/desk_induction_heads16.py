"""InductionHeads(16) desk sweep over batch sizes; keeps the run with the best validation accuracy.

Evaluation places the first marker within twice the training window.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from minmax_rnc.cli import read_yaml, train_config
from minmax_rnc.training import evaluate, train

ROOT = Path(__file__).resolve().parents[1]


def sweep(config_path: Path, out_dir: Path, batch_sizes=(8, 64)) -> dict:
    base = train_config(read_yaml(config_path))
    runs = {}
    for bs in batch_sizes:
        cfg = dataclasses.replace(base, batch_size=bs)
        result = train(cfg, out_dir=out_dir / f"bs{bs}")
        acc = evaluate(result.model, cfg.task, cfg.eval_lengths, cfg.eval_samples, seed=cfg.seed + 2)
        runs[bs] = {"steps": result.steps, "stopped": result.stopped,
                    "val": {str(k): v for k, v in result.best_val.items()},
                    "eval": {str(k): v for k, v in acc.items()}}
    best = max(runs, key=lambda bs: min(runs[bs]["val"].values(), default=0.0))
    summary = {"runs": {str(k): v for k, v in runs.items()}, "best_batch_size": best,
               "eval_window": base.task.eval_window, "train_window": base.task.window}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "induction_heads16.yaml")
    p.add_argument("--out-dir", type=Path, default=ROOT / "runs" / "induction_heads16")
    p.add_argument("--batch-sizes", default="8,64")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sizes = tuple(int(v) for v in args.batch_sizes.split(","))
    print(json.dumps(sweep(args.config, args.out_dir, sizes), indent=2))


if __name__ == "__main__":
    main()
